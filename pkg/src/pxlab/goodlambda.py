"""Level sets, the good-lambda comparison, layer-cake sums and the weighted
gradient estimates.

All measures are cell sums ``sum w h^n``.  The working region is Omega_R
around a centre; the maximal function is applied to ``|Du|^(q/q_-)``
truncated to Omega_2R.
"""

from dataclasses import dataclass, field

import numpy as np

from .comparison import ball_cells, default_sigma0
from .funcspace import GridFunction, morrey_norm, weighted_modular
from .maximal import frac_maximal_1, hl_maximal
from .weights import WeightField, ap_constant, sample_balls

N_LAMBDA = 128


@dataclass
class GoodLambdaConfig:
    """Constants of the good-lambda step.

    ``epsilon`` is (a0 eps0)^(1/kappa_w) with eps0 = (B_ref A0^gamma4)^(-kappa_w)/a0,
    i.e. epsilon = 1 / (B_ref A0^gamma4).
    """

    A0: float
    lambda_grid: np.ndarray
    epsilon0: float
    a0: float
    kappa_w: float
    c_w: float
    q_minus: float
    sigma0: float
    center: np.ndarray = None
    R: float = None
    alpha: float = 1.0
    B_ref: float = 1.0
    gamma4: float = None
    lambda0: float = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if not self.A0 >= 1:
            raise ValueError(f"A0 must be >= 1, got {self.A0}")
        if len(self.lambda_grid) and np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError("lambda grid must be increasing")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    @property
    def epsilon(self):
        return (self.a0 * self.epsilon0) ** (1.0 / self.kappa_w)

    def to_dict(self):
        return {
            "A0": self.A0, "epsilon0": self.epsilon0, "epsilon": self.epsilon, "a0": self.a0,
            "kappa_w": self.kappa_w, "c_w": self.c_w, "q_minus": self.q_minus,
            "sigma0": self.sigma0, "R": self.R, "alpha": self.alpha, "B_ref": self.B_ref,
            "lambda0": self.lambda0, "n_lambda": int(len(self.lambda_grid)),
            "center": None if self.center is None else [float(c) for c in self.center],
        }


@dataclass
class WorkRegion:
    cells_R: np.ndarray
    cells_2R: np.ndarray
    center: np.ndarray
    R: float


def work_region(mask, center=None, R=None):
    """Omega_R and Omega_2R; default centre is the centroid, R = diam/2."""
    if center is None:
        center = mask.centers().mean(axis=0)
    center = np.asarray(center, dtype=float)
    R = 0.5 * mask.diameter + mask.h if R is None else float(R)
    inner = ball_cells(mask.grid, center, R) & mask.inside
    outer = ball_cells(mask.grid, center, 2 * R) & mask.inside
    if not inner.any():
        raise ValueError("empty working region")
    return WorkRegion(inner, outer, center, R)


def _q_values(q):
    return q.values if hasattr(q, "values") else np.asarray(q, dtype=float)


def maximal_fields(u, mu, p, q, region, q_minus=None):
    """(M(|Du|^{q/q_-} chi_2R), M_1(mu)^{q/((p-1) q_-)} + 1) on the full grid."""
    mask = u.mask
    qv = _q_values(q)
    qm = float(qv[region.cells_2R].min()) if q_minus is None else q_minus
    g = u.Du.magnitude
    f = np.where(region.cells_2R, g ** (qv / qm), 0.0)
    M = hl_maximal(f, grid=mask.grid)
    m1 = frac_maximal_1(mu, mask.grid) if mu is not None else np.zeros(mask.grid.shape)
    pv = p.values
    pex = np.where(mask.inside, pv, 2.0)
    K = m1 ** (qv / ((pex - 1) * qm)) + 1.0
    return M, K, qm


def make_config(u, mu, p, q, w, A0=2.0, center=None, R=None, sigma0=None, ainfty=None,
                a0=None, B_ref=1.0, c2=1.0, c6=1.0, n_lambda=N_LAMBDA, fields=None):
    """Config with the lambda grid spanning [lambda0/100, 2 max M]."""
    from .weights import fit_ainfty_constants

    mask = u.mask
    region = work_region(mask, center, R)
    qv = _q_values(q)
    gamma1 = float(p.values[mask.inside].min())
    gamma4 = float(qv[mask.inside].max())
    sigma0 = default_sigma0(mask.n, gamma1) if sigma0 is None else sigma0
    if ainfty is None:
        ainfty = fit_ainfty_constants(w)
    kappa, cw = ainfty.kappa_w, ainfty.c_w
    a0 = 1.0 / ((c2 + c6 + 1) * cw) if a0 is None else a0
    eps0 = (B_ref * A0 ** gamma4) ** (-kappa) / a0
    eps = (a0 * eps0) ** (1.0 / kappa)
    g = u.Du.magnitude[region.cells_2R]
    lam0 = float(np.mean(g ** (1 + sigma0))) / eps
    if fields is None:
        fields = maximal_fields(u, mu, p, q, region)
    M, K, qm = fields
    top = 2.0 * float(M[region.cells_R].max())
    flags = {}
    lo = lam0 / 100
    if not (0 < lo < top):
        # degenerate data: fall back to a window below the field maximum
        flags["lambda_lower_fallback"] = True
        lo = top * 1e-4 if top > 0 else 1e-4
        top = max(top, 1.0)
    grid = np.geomspace(lo, top, n_lambda)
    return GoodLambdaConfig(A0, grid, eps0, a0, kappa, cw, qm, sigma0, region.center,
                            region.R, 1.0, B_ref, gamma4, lam0, flags)


@dataclass
class LevelSetReport:
    lambdas: np.ndarray
    wE: np.ndarray
    wG: np.ndarray
    B_fit: float
    epsilon: float
    A0: float
    inclusion_ok: bool
    monotone_ok: bool
    layer_cake: float
    direct: float
    flags: dict = field(default_factory=dict)

    @property
    def layer_cake_error(self):
        if self.direct == 0:
            return 0.0 if self.layer_cake == 0 else np.inf
        return abs(self.layer_cake - self.direct) / self.direct

    def to_dict(self):
        return {
            "B_fit": self.B_fit, "epsilon": self.epsilon, "A0": self.A0,
            "inclusion_ok": self.inclusion_ok, "monotone_ok": self.monotone_ok,
            "layer_cake": self.layer_cake, "direct": self.direct,
            "layer_cake_error": self.layer_cake_error, "flags": self.flags,
            "lambdas": self.lambdas.tolist(), "wE": self.wE.tolist(), "wG": self.wG.tolist(),
        }


def layer_cake(values, weights, lambdas, s):
    """int f^s w from the distribution w({f > t}) sampled on ``lambdas``.

    Between grid points t^s is integrated exactly and the distribution is
    averaged; below the first point the distribution is taken as constant.
    """
    lam = np.asarray(lambdas, dtype=float)
    dist = np.array([weights[values > t].sum() for t in lam])
    below = lam[0] ** s * dist[0]
    # mass of cells already at or below the first level
    low = values <= lam[0]
    below += float((values[low] ** s * weights[low]).sum())
    steps = np.diff(lam ** s) * 0.5 * (dist[:-1] + dist[1:])
    return float(below + steps.sum())


def level_sets(u, mu, q, w, config, fields=None):
    """w-measures of E_lambda and G_lambda over the config's lambda grid.

    E = {x in Omega_R : M(...) > A0 lambda, M_1(mu)^(...) + 1 <= alpha lambda}
    G = {x in Omega_R : M(...) > lambda}
    """
    mask = u.mask
    p = u.model.p
    region = work_region(mask, config.center, config.R)
    if fields is None:
        fields = maximal_fields(u, mu, p, q, region, config.q_minus)
    M, K, qm = fields
    cells = region.cells_R
    wv = w.values[cells] * mask.grid.cell_volume
    Mv, Kv = M[cells], K[cells]
    lam = config.lambda_grid
    wE = np.empty(len(lam))
    wG = np.empty(len(lam))
    inclusion = True
    for i, t in enumerate(lam):
        G = Mv > t
        E = (Mv > config.A0 * t) & (Kv <= config.alpha * t)
        inclusion &= not np.any(E & ~G)
        wE[i] = wv[E].sum()
        wG[i] = wv[G].sum()
    monotone = bool(np.all(np.diff(wG) <= 0))
    eps = config.epsilon
    pos = wG > 0
    flags = dict(config.flags)
    if not pos.any():
        flags["all_G_empty"] = True
        B = 0.0
    else:
        B = float((wE[pos] / (eps * wG[pos])).max())
    direct = float((Mv ** qm * wv).sum())
    lc = layer_cake(Mv, wv, lam, qm)
    return LevelSetReport(lam, wE, wG, B, eps, config.A0, bool(inclusion), monotone,
                          lc, direct, flags)


@dataclass
class CoveringReport:
    applicable: bool
    hypothesis_a: bool
    hypothesis_b: bool
    c_fit: float
    passed: bool
    n_balls: int
    reason: str = ""

    def __bool__(self):
        return self.passed


def covering_lemma_check(E_cells, G_cells, w, mask, R, epsilon0, center=None,
                         n_balls=400, seed=0, c_bound=None):
    """Empirical check of the weighted Vitali-type covering statement.

    Hypothesis (a): w(E) < eps0 w(Omega_R).  Hypothesis (b) is sampled on
    balls B_rho(y), y in E, rho in (h, R): whenever w(E cap B) >= eps0 w(B)
    the set Omega_R cap B must lie in G.  When both hold the constant
    c = w(E) / (eps0 w(G)) is returned; the check passes if it is finite
    (and below ``c_bound`` when given).
    """
    grid = mask.grid
    region = work_region(mask, center, R)
    OR = region.cells_R
    E = np.asarray(E_cells, bool)
    G = np.asarray(G_cells, bool)
    if np.any(E & ~G) or np.any(G & ~OR):
        raise ValueError("need E subset G subset Omega_R")
    dv = grid.cell_volume
    wE = float(w.values[E].sum() * dv)
    if wE == 0:
        return CoveringReport(True, True, True, 0.0, True, 0, "E empty")
    wOR = float(w.values[OR].sum() * dv)
    if not wE < epsilon0 * wOR:
        return CoveringReport(False, False, False, np.nan, True, 0, "hypothesis (a) fails")
    rng = np.random.default_rng(seed)
    ys = grid.centers(np.argwhere(E))
    xs = grid.mesh()
    h = grid.h
    ok_b = True
    for _ in range(n_balls):
        y = ys[rng.integers(len(ys))]
        rho = float(np.exp(rng.uniform(np.log(h), np.log(region.R))))
        d2 = sum((xs[a] - y[a]) ** 2 for a in range(grid.n))
        B = d2 < rho * rho
        if w.values[E & B].sum() >= epsilon0 * w.values[B].sum():
            if np.any(OR & B & ~G):
                ok_b = False
                break
    if not ok_b:
        return CoveringReport(False, True, False, np.nan, True, n_balls, "hypothesis (b) fails")
    wG = float(w.values[G].sum() * dv)
    c = wE / (epsilon0 * wG)
    passed = bool(np.isfinite(c) and (c_bound is None or c <= c_bound))
    return CoveringReport(True, True, True, c, passed, n_balls)


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    ratio: float
    skipped: bool = False
    reason: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                "skipped": self.skipped, "reason": self.reason, "meta": self.meta}


def _skip(name, reason, meta=None):
    return EstimateReport(name, np.nan, np.nan, np.nan, True, reason, meta or {})


def _ratio(lhs, rhs):
    if not rhs > 0:
        raise ValueError("right side must be positive")
    return lhs / rhs


def mass_term(mu, mask, sigma0, gamma1):
    """|mu|(Omega)^(sigma0/(gamma1-1)) + |Omega|."""
    m = 0.0 if mu is None else mu.total_mass
    return m ** (sigma0 / (gamma1 - 1)) + mask.volume


def _m1(mu, mask, m1=None):
    if m1 is not None:
        return m1
    if mu is None or mu.is_zero():
        return np.zeros(mask.grid.shape)
    return frac_maximal_1(mu, mask.grid)


def assemble_main_estimate(u, mu, q, w, config=None, mask=None, sigma0=None, m1=None,
                           dual=False):
    """lhs = int |Du|^q w, rhs = mass_term^(n+1) + int M_1(mu)^(q/(p-1)) w.

    With ``dual=True`` the exponents become (p-1) q on the left and q on the
    right.
    """
    mask = u.mask if mask is None else mask
    p = u.model.p
    n = mask.n
    gamma1 = float(p.values[mask.inside].min())
    if sigma0 is None:
        sigma0 = config.sigma0 if config is not None else default_sigma0(n, gamma1)
    qv = _q_values(q)
    pv = np.where(mask.inside, p.values, 2.0)
    m1v = _m1(mu, mask, m1)
    qf = _as_exponent(q, mask)
    g = u.Du.magnitude
    if dual:
        lhs = weighted_modular(g ** (pv - 1), qf, w)
        rhs2 = weighted_modular(m1v, qf, w)
    else:
        lhs = weighted_modular(g, qf, w)
        rhs2 = weighted_modular(m1v ** (1.0 / (pv - 1)), qf, w)
    rhs1 = mass_term(mu, mask, sigma0, gamma1) ** (n + 1)
    name = "main-dual" if dual else "main"
    meta = {"rhs_mass": rhs1, "rhs_maximal": rhs2, "sigma0": sigma0, "h": mask.h,
            "q_range": [float(qv[mask.inside].min()), float(qv[mask.inside].max())]}
    return EstimateReport(name, lhs, rhs1 + rhs2, _ratio(lhs, rhs1 + rhs2), False, "", meta)


class _ConstExp:
    """Minimal exponent carrier for weighted_modular."""

    def __init__(self, mask, values):
        self.mask = mask
        self.values = values


def _as_exponent(q, mask):
    if hasattr(q, "mask") and hasattr(q, "values"):
        return q
    v = np.asarray(q, dtype=float)
    return _ConstExp(mask, np.broadcast_to(v, mask.grid.shape))


def _constant_q(q, mask):
    qv = _q_values(q)
    vals = qv[mask.inside] if np.ndim(qv) else np.array([float(qv)])
    if np.ptp(vals) > 0:
        return None
    return float(vals[0])


def power_weight_in_Ap(alpha, n, s):
    """|x|^alpha lies in A_s (s > 1) iff -n < alpha < n (s - 1)."""
    return -n < alpha < n * (s - 1)


def weight_class_ok(w, power, s, balls=None, bound=1e3):
    """Whether w^power is in A_s: exact for the power family, sampled otherwise."""
    if w.family == "power":
        return power_weight_in_Ap(w.params["alpha"] * power, w.grid.n, s)
    if w.family == "constant":
        return True
    wp = WeightField(w.grid, w.values ** power)
    balls = sample_balls(w.grid, 200, seed=0) if balls is None else balls
    return ap_constant(wp, s, balls) < bound


def assemble_corollaries(u, mu, q, w, mask=None, sigma0=None, r=None, lam=None, m1=None):
    """Reports for the constant-q, Sobolev-pair, Morrey and L^{nq/(n-q)} forms.

    Parameters
    ----------
    r : float, optional
        Data exponent for the Sobolev-pair form; defaults to nq/(n+q).
    lam : float, optional
        Morrey index in (0, n); defaults to n/2.
    """
    mask = u.mask if mask is None else mask
    p = u.model.p
    n = mask.n
    gamma1 = float(p.values[mask.inside].min())
    sigma0 = default_sigma0(n, gamma1) if sigma0 is None else sigma0
    pv = np.where(mask.inside, p.values, 2.0)
    g = u.Du.magnitude
    gp = g ** (pv - 1)
    m1v = _m1(mu, mask, m1)
    base = mass_term(mu, mask, sigma0, gamma1)
    qc = _constant_q(q, mask)
    out = []
    dv = mask.grid.cell_volume
    ins = mask.inside

    def lq(f, wv, s):
        return float((np.abs(f[ins]) ** s * wv[ins]).sum() * dv) ** (1.0 / s)

    # constant-q weighted form
    if qc is None:
        out.append(_skip("const_q", "q is not constant"))
    else:
        lhs = lq(gp, w.values, qc)
        rhs = base ** ((n + 1) / qc) + lq(m1v, w.values, qc)
        out.append(EstimateReport("const_q", lhs, rhs, _ratio(lhs, rhs), meta={"q": qc}))

    # Sobolev pair form with data f in L^r_{w^r}
    out.append(_sobolev_pair(u, mu, qc, w, mask, sigma0, gamma1, r, gp, lq))

    # Morrey form
    if qc is None:
        out.append(_skip("morrey", "q is not constant"))
    else:
        lam_ = n / 2 if lam is None else lam
        lhs = morrey_norm(GridFunction(np.where(ins, gp, 0.0), mask), qc, lam_)
        rm = morrey_norm(GridFunction(np.where(ins, m1v, 0.0), mask), qc, lam_)
        rhs = base ** ((n + 1) / qc) + rm
        out.append(EstimateReport("morrey", lhs, rhs, _ratio(lhs, rhs),
                                  meta={"q": qc, "lambda": lam_}))

    # Sobolev-exponent modular form
    qv = _q_values(q)
    qv = np.broadcast_to(qv, mask.grid.shape) if np.ndim(qv) else np.full(mask.grid.shape, float(qv))
    g3, g4 = float(qv[ins].min()), float(qv[ins].max())
    if not (1 < g3 <= g4 < n):
        out.append(_skip("sobolev_modular", f"needs 1 < q < n, got [{g3:.3g}, {g4:.3g}]"))
    elif mu is not None and len(mu.atoms):
        out.append(_skip("sobolev_modular", "data is not a function"))
    else:
        s = np.where(ins, n * qv / (n - np.where(ins, qv, 1.0)), 1.0)
        lhs = float((gp[ins] ** s[ins]).sum() * dv)
        rhs1 = base ** (n + 1)
        rhs2 = float((m1v[ins] ** s[ins]).sum() * dv)
        fmod = 0.0
        if mu is not None and mu.density is not None:
            fmod = float((np.abs(mu.density.values[ins]) ** qv[ins]).sum() * dv)
        out.append(EstimateReport("sobolev_modular", lhs, rhs1 + rhs2, _ratio(lhs, rhs1 + rhs2),
                                  meta={"f_modular": fmod, "q_range": [g3, g4]}))
    return out


def _sobolev_pair(u, mu, qc, w, mask, sigma0, gamma1, r, gp, lq):
    n = mask.n
    if qc is None:
        return _skip("sobolev_pair", "q is not constant")
    r_pair = n * qc / (n + qc)
    r = r_pair if r is None else float(r)
    if abs(1 / r - 1 / qc - 1 / n) > 1e-12:
        return _skip("sobolev_pair", f"1/r - 1/q != 1/n for r={r:.4g}, q={qc:.4g}")
    if not r > 1:
        return _skip("sobolev_pair", f"needs r > 1, got r={r:.4g}")
    if mu is not None and len(mu.atoms):
        return _skip("sobolev_pair", "data is not a function")
    rp = r / (r - 1)
    s = 1 + qc / rp
    if not weight_class_ok(w, qc, s):
        return _skip("sobolev_pair", f"w^q not in A_{s:.4g}")
    ins = mask.inside
    f = np.zeros(mask.grid.shape) if mu is None or mu.density is None else np.abs(mu.density.values)
    wq = w.values ** qc
    wr = w.values ** r
    f1 = float(f[ins].sum() * mask.grid.cell_volume)
    lhs = lq(gp, wq, qc)
    rhs = (f1 ** (sigma0 / (gamma1 - 1)) + mask.volume) ** ((n + 1) / qc) + lq(f, wr, r)
    return EstimateReport("sobolev_pair", lhs, rhs, _ratio(lhs, rhs), meta={"q": qc, "r": r})


__all__ = [
    "GoodLambdaConfig", "LevelSetReport", "CoveringReport", "EstimateReport",
    "work_region", "maximal_fields", "make_config", "level_sets", "layer_cake",
    "covering_lemma_check", "assemble_main_estimate", "assemble_corollaries",
    "mass_term", "power_weight_in_Ap", "weight_class_ok",
]
