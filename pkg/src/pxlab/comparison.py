"""Local comparison problems around interior and boundary points.

Starting from a solution u of  -div a(Du, x) = mu  the cascade solves

* w:  -div a(Dw, x) = 0   on Omega_2R  with w = u on the rim,
* h:  -div b(Dh, x) = 0   on Omega_R   with h = w on the rim,
* v:  -div bbar(Dv) = 0   on B_R       with v = h on the rim (interior),

where b freezes the exponent at its sup p2 over the working region and bbar
averages the coefficient of b over the ball.  Near the boundary an extra
problem V on Omega_R/2 is followed by v on a flat half-ball with zero data
on the flat side.  Rim data is imposed cell-wise: the rim of a region is the
set of its cells with a face-neighbour in the domain but not in the region.
"""

from dataclasses import dataclass, field

import numpy as np

from .funcspace import ExponentField
from .geometry import DomainMask, certify_reifenberg
from .pde import NonlinearityModel, solve_dirichlet, verify_structure

CASCADE_TOL = 1e-10
MIN_HALF_CELLS = 3


class ThresholdError(ValueError):
    """Radius too large for the smallness thresholds."""


@dataclass(eq=False)
class Region:
    """Cells of Omega within distance r of a centre (cell-centre membership)."""

    mask: DomainMask
    center: np.ndarray
    r: float
    cells: np.ndarray

    @property
    def volume(self):
        return float(self.cells.sum()) * self.mask.grid.cell_volume

    def average(self, field):
        return float(field[self.cells].mean())

    @property
    def rim(self):
        """Region cells with a face-neighbour inside the domain but outside the region."""
        cells, ins = self.cells, self.mask.inside
        out = np.zeros_like(cells)
        for ax in range(cells.ndim):
            for sh in (1, -1):
                nb_cells = np.roll(cells, sh, axis=ax)
                nb_ins = np.roll(ins, sh, axis=ax)
                out |= cells & nb_ins & ~nb_cells
        return out


def ball_cells(grid, center, r):
    xs = grid.mesh()
    d2 = sum((xs[a] - center[a]) ** 2 for a in range(grid.n))
    return d2 < r * r


def ball_region(mask, center, r):
    center = np.asarray(center, dtype=float)
    cells = ball_cells(mask.grid, center, r) & mask.inside
    if not cells.any():
        raise ValueError(f"region around {center.tolist()} with r={r} has no cells")
    return Region(mask, center, float(r), cells)


def F_functional(mu, u, region, p=None):
    """F(mu, u, Omega_r) with p+ the sup of p over the region.

    ``p`` defaults to the exponent of the model that produced ``u``.

    F = [m/r^(n-1)]^(1/(p+ - 1)) + [m/r^(n-1)] (mean(|Du|+1))^(2-p+) [p+ <= 2] + 1
    with m = |mu|(Omega_r).
    """
    n = region.mask.n
    r = region.r
    if p is None:
        p = u.model.p
    pv = p.values if isinstance(p, ExponentField) else np.asarray(p)
    pplus = float(np.max(pv[region.cells])) if np.ndim(pv) else float(pv)
    m = _region_mass(mu, region)
    if m == 0:
        return 1.0
    t = m / r ** (n - 1)
    val = t ** (1.0 / (pplus - 1)) + 1.0
    if pplus <= 2:
        gm = u.Du.magnitude if hasattr(u, "Du") else np.asarray(u)
        val += t * region.average(gm + 1.0) ** (2 - pplus)
    return float(val)


def _region_mass(mu, region):
    if mu is None:
        return 0.0
    grid = region.mask.grid
    m = 0.0
    for pt, mass in zip(mu.atoms, mu.masses):
        idx = grid.index_of(pt)
        if grid.contains_index(idx) and region.cells[tuple(idx)]:
            m += float(mass)
    if mu.density is not None:
        m += float(mu.density.values[region.cells].sum() * grid.cell_volume)
    return m


def modulus_threshold_radius(p, Lambda1, Lambda2):
    """Largest tabulated R with omega(4R) < Lambda2 / (2 Lambda1)."""
    target = Lambda2 / (2 * Lambda1)
    R = p.radii / 4
    ok = p.modulus(4 * R) < target
    if ok.all():
        return float(np.inf)
    if not ok[0]:
        return 0.0
    return float(R[np.flatnonzero(~ok)[0] - 1])


@dataclass
class Thresholds:
    R0: float
    R_omega: float
    R_a: float
    K0_inv: float

    @property
    def limit(self):
        return min(self.R0, self.R_omega, self.R_a, self.K0_inv) / 10

    def to_dict(self):
        return {"R0": self.R0, "R_omega": self.R_omega, "R_a": self.R_a,
                "K0_inv": self.K0_inv, "limit": self.limit}


def default_sigma0(n, gamma1):
    return 0.5 * min(n * (gamma1 - 1) / (n - 1), n)


def a_priori_K0(u, sigma0):
    """Measured K0 = int (|Du|^sigma0 + 1) over the domain."""
    mask = u.mask
    g = u.Du.magnitude[mask.inside]
    return float(((g ** sigma0) + 1).sum() * mask.grid.cell_volume)


def compute_thresholds(model, u, R0, sigma0=None, structure=None):
    from .funcspace import check_log_holder

    rep = check_log_holder(model.p)
    if structure is None:
        structure = verify_structure(model)
    L1, L2 = structure.Lambda1_fit, structure.Lambda2_fit
    gamma1 = float(model.p.values[model.mask.inside].min())
    sigma0 = default_sigma0(model.mask.n, gamma1) if sigma0 is None else sigma0
    K0 = a_priori_K0(u, sigma0)
    R_a = min(modulus_threshold_radius(model.p, L1, L2), model.mask.diameter)
    return Thresholds(float(R0), float(rep.R_omega), float(R_a), 1.0 / K0)


@dataclass
class ComparisonConfig:
    center: np.ndarray
    R: float
    thresholds: Thresholds
    p1: float = None
    p2: float = None
    Lambda1: float = 1.0
    Lambda2: float = 1.0

    def check(self):
        if self.R > self.thresholds.limit * (1 + 1e-12):
            raise ThresholdError(
                f"R={self.R:.4g} exceeds min(R0, R_omega, R_a, 1/K0)/10 = {self.thresholds.limit:.4g}"
            )

    def to_dict(self):
        return {"center": [float(c) for c in self.center], "R": self.R,
                "thresholds": self.thresholds.to_dict(), "p1": self.p1, "p2": self.p2}


def make_config(model, u, center, R, R0, sigma0=None, structure=None):
    """Thresholds, local exponent bounds and a validated config."""
    if structure is None:
        structure = verify_structure(model)
    th = compute_thresholds(model, u, R0, sigma0, structure)
    reg = ball_region(model.mask, center, 2 * R)
    p1, p2 = model.p.range_on(reg.cells)
    cfg = ComparisonConfig(np.asarray(center, dtype=float), float(R), th, p1, p2,
                           structure.Lambda1_fit, structure.Lambda2_fit)
    cfg.check()
    return cfg


def freeze_exponent(model, region, Lambda1=None, Lambda2=None, R=None):
    """Frozen-exponent nonlinearity b on ``region``.

    b(xi, x) = (s^2+|xi|^2)^((p2-p(x))/2) a(xi, x) inside the region and the
    same with x replaced by the region centre outside, where p2 is the sup
    of p over the region.  For the model class this is a p2-growth map with
    coefficient c(x) inside and c(x0) outside.

    Raises
    ------
    ThresholdError
        If omega(4R) >= Lambda2 / (2 Lambda1).
    """
    L1 = model.Lambda1 if Lambda1 is None else Lambda1
    L2 = model.Lambda2 if Lambda2 is None else Lambda2
    if L1 is None or L2 is None:
        rep = verify_structure(model)
        L1, L2 = rep.Lambda1_fit, rep.Lambda2_fit
    R = region.r / 2 if R is None else R
    om = float(model.p.modulus(4 * R)) if not model.p.is_constant() else 0.0
    if om >= L2 / (2 * L1):
        raise ThresholdError(f"omega(4R) = {om:.4g} >= Lambda2/(2 Lambda1) = {L2 / (2 * L1):.4g}")
    mask = model.mask
    p2 = float(model.p.values[region.cells].max())
    x0 = mask.grid.index_of(region.center)
    x0 = tuple(np.clip(x0, 0, np.asarray(mask.grid.shape) - 1))
    coeff = np.where(region.cells, model.coeff, model.coeff[x0])
    pf = ExponentField(mask, np.full(mask.grid.shape, p2), p2, p2, model.p.radii,
                       np.zeros_like(model.p.radii), "constant", {"p0": p2})
    return NonlinearityModel(pf, model.s, coeff, 3 * L1, L2 / 2, "frozen")


def average_nonlinearity(model_b, region):
    """x-independent model: coefficient averaged over the ball of ``region``."""
    grid = model_b.mask.grid
    cells = ball_cells(grid, region.center, region.r)
    cbar = float(model_b.coeff[cells].mean())
    return NonlinearityModel(model_b.p, model_b.s, np.full(grid.shape, cbar),
                             model_b.Lambda1, model_b.Lambda2, "averaged")


@dataclass(eq=False)
class CascadeResult:
    w: object
    h: object
    v: object
    F_value: float
    ratios: dict
    kind: str = "interior"
    V: object = None
    flags: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def converged(self):
        sols = [s for s in (self.w, self.h, self.V, self.v) if s is not None]
        return all(s.converged for s in sols)

    def to_dict(self):
        return {"kind": self.kind, "F": self.F_value, "ratios": self.ratios,
                "flags": self.flags, "info": self.info, "converged": self.converged}


def _subsolve(model, mask, region, data, tol):
    """Homogeneous solve on ``region`` with the rim held at ``data`` (full grid)."""
    rim = region.rim
    free = region.cells & ~rim
    if not free.any():
        raise ValueError("region has no interior cells at this resolution")
    res = solve_dirichlet(model, None, mask, tol=tol, free=free,
                          boundary_values=data, u0=data, max_iter=400)
    return res


def _pmean(g, cells, p):
    return float(np.mean(g[cells] ** p)) ** (1.0 / p)


def _diffmag(a, b):
    return (a.Du - b.Du).magnitude


def run_interior_cascade(model, mu, u, config, tol=CASCADE_TOL):
    """Interior cascade u -> w -> h -> v with the four measured ratios.

    Ratios:
    ``Du_w``    mean_{B2R}|D(u-w)| / F
    ``freeze``  (mean_{BR}|D(h-w)|^p2)^(1/p2) / (F + mean_{B2R}|Du|)
    ``v_lip``   max_{B_R/2}|Dv| / (F + mean|Du|)
    ``v_h``     (mean_{B_R/2}|D(v-h)|^p2)^(1/p2) / (F + mean|Du|)
    """
    config.check()
    mask = u.mask
    grid = mask.grid
    x0, R = config.center, config.R
    B2 = ball_region(mask, x0, 2 * R)
    full2 = ball_cells(grid, x0, 2 * R)
    if not np.array_equal(B2.cells, full2):
        raise ValueError("B_2R is not contained in the domain")
    B1 = ball_region(mask, x0, R)
    Bh = ball_region(mask, x0, R / 2)
    flags = {}

    w = _subsolve(model, mask, B2, u.u.values, tol)
    b = freeze_exponent(model, B2, config.Lambda1, config.Lambda2, R)
    h = _subsolve(b, mask, B1, w.u.values, tol)
    bbar = average_nonlinearity(b, B1)
    v = _subsolve(bbar, mask, B1, h.u.values, tol)
    for name, s in (("w", w), ("h", h), ("v", v)):
        if not s.converged:
            flags[f"{name}_not_converged"] = True

    p2 = float(b.p.values[B2.cells].max())
    F = F_functional(mu, u, B2, model.p)
    gu = u.Du.magnitude
    avg = B2.average(gu)
    denom = F + avg
    ratios = {
        "Du_w": B2.average(_diffmag(u, w)) / F,
        "freeze": _pmean(_diffmag(h, w), B1.cells, p2) / denom,
        "v_lip": float(v.Du.magnitude[Bh.cells].max()) / denom,
        "v_h": _pmean(_diffmag(v, h), Bh.cells, p2) / denom,
    }
    info = {"p2": p2, "mean_Du": avg, "cells_2R": int(B2.cells.sum())}
    return CascadeResult(w, h, v, F, ratios, "interior", None, flags, info)


def _half_region(mask, x0, r, normal, shift):
    """Cells of Omega in B_r(x0) with <y - x0, normal> > shift."""
    grid = mask.grid
    xs = grid.mesh()
    proj = sum((xs[a] - x0[a]) * normal[a] for a in range(grid.n))
    ball = ball_cells(grid, x0, r)
    return ball & mask.inside & (proj > shift), ball, proj


def run_boundary_cascade(model, mu, u, config, boundary_center=None, tol=CASCADE_TOL):
    """Boundary cascade on Omega_2R, Omega_R, Omega_R/2 and a flat half-ball.

    The flat half-ball uses the best normal of a flatness certificate at
    the centre; v vanishes on the flat side, takes V on the curved rim and
    is extended by zero.

    Ratios:
    ``Du_w``      mean_{Omega_2R}|D(u-w)| / F
    ``freeze_F``  mean_{Omega_R}|D(h-w)|^p2 / F^p2
    ``freeze``    (mean_{Omega_R}|D(h-w)|^p2)^(1/p2) / (F + mean|Du|)
    ``V_h``       (mean_{Omega_R/4}|D(V-h)|^p2)^(1/p2) / (F + mean|Du|)
    ``v_lip``     max_{Omega_R/8}|Dv|^p2 / lambda^p2
    ``u_v``       mean_{Omega_R/8}|D(u-v)|^p2 / lambda^p2
    with lambda = max(1, mean_{Omega_2R}|Du|, F).
    """
    config.check()
    mask = u.mask
    grid = mask.grid
    x0 = np.asarray(config.center if boundary_center is None else boundary_center, dtype=float)
    R = config.R
    O2 = ball_region(mask, x0, 2 * R)
    O1 = ball_region(mask, x0, R)
    # inner radii are floored so each region keeps a few cells
    rh = max(R / 2, MIN_HALF_CELLS * mask.h)
    Oh = ball_region(mask, x0, rh)
    O4 = ball_region(mask, x0, max(R / 4, 1.5 * mask.h))
    O8 = ball_region(mask, x0, max(R / 8, 1.5 * mask.h))
    flags = {}
    if rh > R / 2:
        flags["resolution_floor"] = True
    if np.array_equal(O2.cells, ball_cells(grid, x0, 2 * R)):
        flags["not_near_boundary"] = True

    w = _subsolve(model, mask, O2, u.u.values, tol)
    b = freeze_exponent(model, O1, config.Lambda1, config.Lambda2, R)
    p2 = float(model.p.values[O2.cells].max())
    if p2 > float(b.p.values.flat[0]):
        # exponent frozen at the sup over Omega_2R
        b = NonlinearityModel(
            ExponentField(mask, np.full(grid.shape, p2), p2, p2, model.p.radii,
                          np.zeros_like(model.p.radii), "constant", {"p0": p2}),
            b.s, b.coeff, b.Lambda1, b.Lambda2, "frozen")
    h = _subsolve(b, mask, O1, w.u.values, tol)
    bbar = average_nonlinearity(b, O1)
    V = _subsolve(bbar, mask, Oh, h.u.values, tol)

    # flat half-ball from the certificate normal at the centre
    cert = certify_reifenberg(mask, max(rh, 4 * mask.h), n_dirs=360, n_radii=1, points=[x0], exclude_corners=False)
    nu, delta = cert.normals[0], float(cert.deviations[0])
    shift = delta * rh
    H, ballh, proj = _half_region(mask, x0, rh, nu, shift)
    slack = 0.5 * mask.h
    if (ballh & (proj > shift + slack) & ~mask.inside).any():
        flags["sandwich_violated"] = True
    if (ballh & mask.inside & (proj < -shift - slack)).any():
        flags["sandwich_violated"] = True
    v = None
    Dv = np.zeros((grid.n,) + grid.shape)
    # v lives on the upper part of the domain: the flat side is a zero wall,
    # cells leaving the ball on the upper side are held at V
    upper = mask.inside & (proj > shift)
    upper_out = upper & ~ballh
    curved = np.zeros_like(H)
    for ax in range(grid.n):
        for sh in (1, -1):
            curved |= H & np.roll(upper_out, sh, axis=ax)
    free = H & ~curved
    if free.sum() >= 1 and upper.any():
        Umask = DomainMask(grid, upper, np.zeros((0, grid.n)), "upper-half")
        v = solve_dirichlet(bbar, None, Umask, tol=tol, free=free,
                            boundary_values=V.u.values, u0=V.u.values, max_iter=400)
        Dv = np.where(H, v.Du.components, 0.0)
    else:
        flags["half_ball_too_small"] = True
    for name, s in (("w", w), ("h", h), ("V", V), ("v", v)):
        if s is not None and not s.converged:
            flags[f"{name}_not_converged"] = True

    F = F_functional(mu, u, O2, model.p)
    gu = u.Du.magnitude
    avg = O2.average(gu)
    lam = max(1.0, avg, F)
    denom = F + avg
    dvmag = np.sqrt((Dv ** 2).sum(0))
    duv = np.sqrt(((u.Du.components - Dv) ** 2).sum(0))
    hw = _diffmag(h, w)
    ratios = {
        "Du_w": O2.average(_diffmag(u, w)) / F,
        "freeze_F": float(np.mean(hw[O1.cells] ** p2)) / F ** p2,
        "freeze": _pmean(hw, O1.cells, p2) / denom,
        "V_h": _pmean(_diffmag(V, h), O4.cells, p2) / denom,
        "v_lip": float(dvmag[O8.cells].max()) ** p2 / lam ** p2,
        "u_v": float(np.mean(duv[O8.cells] ** p2)) / lam ** p2,
    }
    info = {"p2": p2, "mean_Du": avg, "lambda": lam, "delta_local": delta,
            "normal": nu.tolist(), "half_cells": int(H.sum())}
    res = CascadeResult(w, h, v, F, ratios, "boundary", V, flags, info)
    return res


def higher_integrability_probe(w_result, config, sigma, q):
    """(mean_{B_R}|Dw|^{p(1+s)})^{1+s} / [(mean_{B_2R}|Dw|^{q p})^{1/q} + 1].

    Returns ``(ratio, left, right)``.
    """
    if not 0 <= sigma <= 0.1:
        raise ValueError("sigma must lie in [0, 0.1]")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    mask = w_result.mask
    p = w_result.model.p.values
    g = w_result.Du.magnitude
    B1 = ball_region(mask, config.center, config.R)
    B2 = ball_region(mask, config.center, 2 * config.R)
    left = float(np.mean(g[B1.cells] ** (p[B1.cells] * (1 + sigma)))) ** (1 + sigma)
    right = float(np.mean(g[B2.cells] ** (q * p[B2.cells]))) ** (1 / q) + 1.0
    return left / right, left, right
