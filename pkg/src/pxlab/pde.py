"""The model nonlinearity a(xi, x), its structure checks, and the Dirichlet solver.

The solver treats  -div a(Du, x) = f  in Omega, u = 0 on the boundary, in
the weak form  int a(Du, x).D(phi) = int phi f.  It minimizes the discrete
energy

    J(U) = sum_c h^n c(x)/p(x) (s^2 + t_c)^(p(x)/2) - sum_c f_c U_c h^n,

where t_c is half the sum of the squared face gradients of cell c (faces
towards the exterior use the half-cell distance to a zero face value), by a
damped frozen-coefficient (Kacanov) iteration.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse.linalg import spsolve

from ._balls import ball_offsets, dyadic_radii
from .funcspace import ExponentField, GradientField, GridFunction, gradient
from .maximal import RadonMeasure

SIGMA_FLOOR = 1e-12
SIGMA_CEIL = 1e12


@dataclass(eq=False)
class NonlinearityModel:
    """a(xi, x) = c(x) (s^2 + |xi|^2)^((p(x)-2)/2) xi.

    ``coeff`` is a full-grid positive array (default 1).  ``Lambda1`` and
    ``Lambda2`` hold the growth/ellipticity constants claimed for the model;
    :func:`verify_structure` measures them.
    """

    p: ExponentField
    s: float = 0.0
    coeff: np.ndarray = None
    Lambda1: float = None
    Lambda2: float = None
    label: str = "p-laplacian"

    def __post_init__(self):
        if not 0 <= self.s <= 1:
            raise ValueError("s must lie in [0, 1]")
        shape = self.p.mask.grid.shape
        if self.coeff is None:
            self.coeff = np.ones(shape)
        self.coeff = np.broadcast_to(np.asarray(self.coeff, dtype=float), shape).copy()
        if not np.all(self.coeff > 0) or not np.all(np.isfinite(self.coeff)):
            raise ValueError("coefficient must be positive and bounded")

    @property
    def mask(self):
        return self.p.mask

    def with_constants(self, Lambda1, Lambda2):
        return NonlinearityModel(self.p, self.s, self.coeff, Lambda1, Lambda2, self.label)


def eval_a(model, xi, cell):
    """a(xi, x) at the centre of ``cell``; ``xi`` has shape (..., n)."""
    xi = np.asarray(xi, dtype=float)
    p = model.p.values[cell]
    c = model.coeff[cell]
    S = model.s ** 2 + (xi ** 2).sum(-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(S > 0, c * S ** ((p - 2) / 2), 0.0)
    return fac * xi


def _scan_vectors(n, count):
    # magnitude 0 plus log-spaced magnitudes in [1e-3, 1e3], spread directions
    mags = np.concatenate([[0.0], np.logspace(-3, 3, count - 1)])
    mags = mags[np.random.default_rng(12345).permutation(count)]
    k = np.arange(count)
    if n == 2:
        th = 2 * np.pi * k / count
        dirs = np.stack([np.cos(th), np.sin(th)], 1)
    else:
        z = 1 - 2 * (k + 0.5) / count
        phi = np.pi * (1 + 5 ** 0.5) * k
        rho = np.sqrt(1 - z ** 2)
        dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], 1)
    return mags[:, None] * dirs


@dataclass
class StructureReport:
    Lambda1_fit: float
    Lambda2_fit: float
    monotonicity_ok: bool
    Lambda1_sum: float
    Lambda2_ellipticity: float
    Lambda2_quadratic: float
    Lambda2_power: float
    n_points: int
    witness: dict = None

    def __iter__(self):
        return iter((self.Lambda1_fit, self.Lambda2_fit, self.monotonicity_ok))


def _scan_cells(model, cells=None, max_cells=12):
    mask = model.mask
    if cells is not None:
        return [tuple(int(v) for v in c) for c in cells]
    idx = np.argwhere(mask.inside)
    pv = model.p.values[mask.inside]
    cv = model.coeff[mask.inside]
    pick = {int(np.argmin(pv)), int(np.argmax(pv)), int(np.argmin(cv)), int(np.argmax(cv))}
    rng = np.random.default_rng(0)
    extra = rng.choice(len(idx), size=min(len(idx), max_cells - len(pick)), replace=False)
    pick.update(int(e) for e in extra)
    return [tuple(int(v) for v in idx[k]) for k in sorted(pick)]


def verify_structure(model, cells=None, n_xi=100, n_eta=100):
    """Measure the growth and monotonicity constants on a scan.

    For each scanned cell, ``n_xi x n_eta`` pairs (xi, eta) with magnitudes
    in {0} u [1e-3, 1e3] are tested.

    Returns
    -------
    StructureReport
        ``Lambda1_fit`` is the sup of
        max((s^2+|xi|^2)^(1/2) |D a|, |a|) / (s^2+|xi|^2)^((p-1)/2)
        and ``Lambda1_sum`` the same with the sum of the two terms.
        ``Lambda2_fit`` is the smaller of the two monotonicity ratios (the
        quadratic form, and the |xi - eta|^p form where
        |xi - eta| <= (s^2+|xi|^2+|eta|^2)^(1/2)).
    """
    n = model.mask.n
    s2 = model.s ** 2
    xis = _scan_vectors(n, n_xi)
    etas = -_scan_vectors(n, n_eta)
    L1 = L1s = 0.0
    L2e = L2q = L2p = np.inf
    mono = True
    witness = None
    npts = 0
    for cell in _scan_cells(model, cells):
        p = float(model.p.values[cell])
        c = float(model.coeff[cell])
        # growth: |a| and the operator norm of D_xi a
        S = s2 + (xis ** 2).sum(1)
        ok = S > 0
        Sx, xm = S[ok], np.sqrt((xis[ok] ** 2).sum(1))
        base = c * Sx ** ((p - 2) / 2)
        par = base * (1 + (p - 2) * xm ** 2 / Sx)
        dnorm = np.maximum(np.abs(base), np.abs(par))
        amag = base * xm
        scale = Sx ** ((p - 1) / 2)
        L1 = max(L1, float((np.maximum(np.sqrt(Sx) * dnorm, amag) / scale).max()))
        L1s = max(L1s, float(((np.sqrt(Sx) * dnorm + amag) / scale).max()))
        L2e = min(L2e, float((np.minimum(base, par) / Sx ** ((p - 2) / 2)).min()))
        # monotonicity on pairs
        A = eval_a(model, xis, cell)
        B = eval_a(model, etas, cell)
        dx = xis[:, None, :] - etas[None, :, :]
        da = A[:, None, :] - B[None, :, :]
        inner = (dx * da).sum(-1)
        d2 = (dx ** 2).sum(-1)
        T = s2 + (xis ** 2).sum(1)[:, None] + (etas ** 2).sum(1)[None, :]
        npts += inner.size
        tolr = 1e-12 * np.sqrt(d2 * (da ** 2).sum(-1))
        if np.any(inner < -tolr):
            mono = False
            i, j = np.unravel_index(np.argmin(inner + tolr), inner.shape)
            witness = {"cell": cell, "xi": xis[i].tolist(), "eta": etas[j].tolist(), "inner": float(inner[i, j])}
        sel = (d2 > 0) & (T > 0)
        q = inner[sel] / (T[sel] ** ((p - 2) / 2) * d2[sel])
        L2q = min(L2q, float(q.min()))
        selp = sel & (d2 <= T)
        if selp.any():
            L2p = min(L2p, float((inner[selp] / d2[selp] ** (p / 2)).min()))
    return StructureReport(
        Lambda1_fit=L1,
        Lambda2_fit=min(L2q, L2p),
        monotonicity_ok=mono,
        Lambda1_sum=L1s,
        Lambda2_ellipticity=L2e,
        Lambda2_quadratic=L2q,
        Lambda2_power=L2p,
        n_points=npts,
        witness=witness,
    )


@dataclass
class BmoReport:
    beta: float
    R0: float
    value: float
    argmax: tuple = None


def normalized_a(model, xi, cells):
    """a(xi, x) / (s^2 + |xi|^2)^((p(x)-1)/2) for cells (m, n) -> (m, n)."""
    xi = np.asarray(xi, dtype=float)
    p = model.p.values[tuple(cells.T)]
    c = model.coeff[tuple(cells.T)]
    S = model.s ** 2 + float(xi @ xi)
    if S == 0:
        return np.zeros((len(cells), len(xi)))
    fac = c * S ** ((p - 2) / 2) / S ** ((p - 1) / 2)
    return fac[:, None] * xi[None, :]


def bmo_seminorm(model, beta=2.0, R0=None, centers=None, radii=None, xi_sample=None):
    """Sampled [a]_{beta, R0}: sup over balls of the mean of Theta^beta.

    Theta(x) = sup over xi_sample of |A(xi, x) - mean_B A(xi, .)| where
    A(xi, x) = a(xi, x)/(s^2+|xi|^2)^((p(x)-1)/2).  Ball cells are those
    of the grid within distance r of the centre.
    """
    if beta < 1:
        raise ValueError("beta must be >= 1")
    mask = model.mask
    grid = mask.grid
    h = grid.h
    R0 = mask.diameter if R0 is None else R0
    if radii is None:
        radii = dyadic_radii(h, R0)
    radii = [r for r in radii if r <= R0 * (1 + 1e-12)]
    if xi_sample is None:
        xi_sample = _scan_vectors(mask.n, 16)[1:]
    if centers is None:
        idx = np.argwhere(mask.inside)
        stride = max(1, len(idx) // 400)
        centers = grid.centers(idx[::stride])
    best, arg = 0.0, None
    shape = np.asarray(grid.shape)
    for r in radii:
        offs, _ = ball_offsets(r, h, mask.n)
        for y in np.atleast_2d(centers):
            cells = grid.index_of(y) + offs
            cells = cells[np.all((cells >= 0) & (cells < shape), axis=1)]
            theta = np.zeros(len(cells))
            for xi in xi_sample:
                A = normalized_a(model, xi, cells)
                dev = np.sqrt(((A - A.mean(0)) ** 2).sum(1))
                np.maximum(theta, dev, out=theta)
            val = float(np.mean(theta ** beta))
            if val > best:
                best, arg = val, (tuple(float(v) for v in y), float(r))
    return BmoReport(float(beta), float(R0), best, arg)


def hat_kernel(k, h, n):
    offs, d = ball_offsets(k, h, n)
    m = int(np.abs(offs).max()) if len(offs) else 0
    K = np.zeros((2 * m + 1,) * n)
    K[tuple((offs + m).T)] = np.maximum(0.0, 1.0 - d * h / k)
    return K


def mollify_measure(mu, k, mask):
    """Mass-preserving smoothing of ``mu`` by a hat kernel of width ``k``.

    Each source (atom or density cell) is spread with weights
    max(0, 1 - |x - y|/k) over the inside cells, normalized per source so
    that exactly its mass lands in the domain.

    Returns
    -------
    GridFunction
        Density (mass per unit volume) on ``mask``.
    """
    grid = mask.grid
    h, n = grid.h, grid.n
    if k < h * (1 - 1e-12):
        raise ValueError(f"smoothing scale {k} below h = {h}")
    ins = mask.inside.astype(float)
    dv = grid.cell_volume
    out = np.zeros(grid.shape)
    K = hat_kernel(k, h, n)
    m = K.shape[0] // 2
    shape = np.asarray(grid.shape)
    for p, mass in zip(mu.atoms, mu.masses):
        if mass == 0:
            continue
        # spread around the atom position itself, not its cell centre
        base = grid.index_of(p)
        cand = base + np.argwhere(np.ones((2 * m + 3,) * n)) - (m + 1)
        cand = cand[np.all((cand >= 0) & (cand < shape), axis=1)]
        d = np.linalg.norm(grid.centers(cand) - p, axis=1)
        wv = np.maximum(0.0, 1.0 - d / k) * mask.inside[tuple(cand.T)]
        if wv.sum() == 0:
            # atom too far from the domain: drop it into the nearest inside cell
            inside_idx = np.argwhere(mask.inside)
            j = np.argmin(np.linalg.norm(grid.centers(inside_idx) - p, axis=1))
            out[tuple(inside_idx[j])] += mass / dv
            continue
        np.add.at(out, tuple(cand.T), mass * wv / (wv.sum() * dv))
    if mu.density is not None:
        dens = np.where(mask.inside, mu.density.values, 0.0)
        if dens.any():
            norm = fftconvolve(ins, K, mode="same")
            src = np.where(dens > 0, dens / np.maximum(norm, 1e-300), 0.0)
            out += np.maximum(fftconvolve(src, K, mode="same"), 0.0) * ins
    return GridFunction(out, mask)


@dataclass(eq=False)
class SolveResult:
    u: GridFunction
    Du: GradientField
    iterations: int
    residual: float
    energy: list
    converged: bool
    model: NonlinearityModel
    free: np.ndarray
    f: np.ndarray
    flags: dict = field(default_factory=dict)

    @property
    def mask(self):
        return self.u.mask

    def grad_magnitude(self):
        return self.Du.magnitude

    def summary(self):
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "energy_first": self.energy[0] if self.energy else None,
            "energy_last": self.energy[-1] if self.energy else None,
            "flags": self.flags,
        }


class SolverFailure(RuntimeError):
    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


class _Discretization:
    """Face bookkeeping for a set of free cells inside a mask."""

    def __init__(self, mask, free):
        self.mask = mask
        self.ins = mask.inside
        self.free = free & mask.inside
        self.h = mask.h
        self.n = mask.n
        self.num = -np.ones(mask.grid.shape, dtype=np.int64)
        self.num[self.free] = np.arange(int(self.free.sum()))
        self.N = int(self.free.sum())
        # faces between two mask cells, and faces from a mask cell to outside
        self.pairs = []
        self.walls = []
        for ax in range(self.n):
            sl_a = [slice(None)] * self.n
            sl_b = [slice(None)] * self.n
            sl_a[ax] = slice(0, -1)
            sl_b[ax] = slice(1, None)
            a_in = self.ins[tuple(sl_a)]
            b_in = self.ins[tuple(sl_b)]
            ia = np.argwhere(a_in & b_in)
            ib = ia.copy()
            ib[:, ax] += 1
            self.pairs.append((ax, ia, ib))
            # mask cell whose +ax neighbour is outside, and whose -ax one is
            w1 = np.argwhere(a_in & ~b_in)
            w2 = np.argwhere(~a_in & b_in)
            w2[:, ax] += 1
            self.walls.append(np.concatenate([w1, w2]))

    def t_field(self, U):
        """Half the sum of squared face gradients at each mask cell."""
        h = self.h
        t = np.zeros(self.mask.grid.shape)
        for (ax, ia, ib), walls in zip(self.pairs, self.walls):
            g = (U[tuple(ib.T)] - U[tuple(ia.T)]) / h
            np.add.at(t, tuple(ia.T), 0.5 * g ** 2)
            np.add.at(t, tuple(ib.T), 0.5 * g ** 2)
            gw = 2 * U[tuple(walls.T)] / h
            np.add.at(t, tuple(walls.T), 0.5 * gw ** 2)
        return t

    def assemble(self, sigma, U, f):
        """Scaled system  A U_free = b  (both multiplied by h^(2-n))."""
        h = self.h
        rows, cols, vals = [], [], []
        diag = np.zeros(self.N)
        rhs = f[self.free] * h ** 2
        bterm = np.zeros(self.N)
        num = self.num
        for (ax, ia, ib), walls in zip(self.pairs, self.walls):
            sf = 0.5 * (sigma[tuple(ia.T)] + sigma[tuple(ib.T)])
            na = num[tuple(ia.T)]
            nb = num[tuple(ib.T)]
            both = (na >= 0) & (nb >= 0)
            rows += [na[both], nb[both]]
            cols += [nb[both], na[both]]
            vals += [-sf[both], -sf[both]]
            np.add.at(diag, na[both], sf[both])
            np.add.at(diag, nb[both], sf[both])
            a_only = (na >= 0) & (nb < 0)
            np.add.at(diag, na[a_only], sf[a_only])
            np.add.at(bterm, na[a_only], sf[a_only] * U[tuple(ib[a_only].T)])
            b_only = (nb >= 0) & (na < 0)
            np.add.at(diag, nb[b_only], sf[b_only])
            np.add.at(bterm, nb[b_only], sf[b_only] * U[tuple(ia[b_only].T)])
            nw = num[tuple(walls.T)]
            fw = nw >= 0
            np.add.at(diag, nw[fw], 2.0 * sigma[tuple(walls[fw].T)])
        rows.append(np.arange(self.N))
        cols.append(np.arange(self.N))
        vals.append(diag)
        A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.N, self.N),
        )
        return A, rhs + bterm, bterm


def _sigma(model, t):
    p = model.p.values
    base = model.s ** 2 + t
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        sig = model.coeff * np.where(base > 0, base ** ((p - 2) / 2), np.where(p > 2, 0.0, np.inf))
    clipped = bool(np.any((sig < SIGMA_FLOOR) | (sig > SIGMA_CEIL)))
    return np.clip(sig, SIGMA_FLOOR, SIGMA_CEIL), clipped


def _energy(model, disc, U, f):
    t = disc.t_field(U)
    ins = disc.ins
    p = model.p.values[ins]
    dens = model.coeff[ins] / p * (model.s ** 2 + t[ins]) ** (p / 2)
    dv = disc.mask.grid.cell_volume
    return float(dens.sum() * dv - (f[disc.free] * U[disc.free]).sum() * dv)


def source_density(mu, mask, scale=None):
    """Cell density of ``mu`` on ``mask``; atoms are smoothed at ``scale`` (default 2h)."""
    if mu is None:
        return np.zeros(mask.grid.shape)
    if isinstance(mu, GridFunction):
        return np.where(mask.inside, mu.values, 0.0)
    if isinstance(mu, np.ndarray):
        return np.where(mask.inside, mu, 0.0)
    f = np.zeros(mask.grid.shape)
    if len(mu.atoms):
        atoms = RadonMeasure(mu.atoms, mu.masses, None)
        f += mollify_measure(atoms, 2 * mask.h if scale is None else scale, mask).values
    if mu.density is not None:
        f += np.where(mask.inside, mu.density.values, 0.0)
    return f


def solve_dirichlet(model, mu, mask=None, tol=1e-8, max_iter=200, damping=None,
                    free=None, boundary_values=None, u0=None, raise_on_failure=False):
    """Solve -div a(Du, x) = mu with Dirichlet data by damped Kacanov steps.

    Parameters
    ----------
    model : NonlinearityModel
    mu : RadonMeasure, GridFunction, array or None
        Right-hand side.  Atoms are smoothed at scale 2h first.
    mask : DomainMask, optional
        Defaults to the model's mask.
    tol : float
        Target for the weak-form defect: max over cell indicators of
        |int a(Du).D(phi) - int phi f|, divided by ||f||_1 plus the size of
        the boundary-data forcing.
    max_iter : int
    damping : float, optional
        Step length theta; default 1 for max p <= 2 and 0.5 otherwise.  The
        step is halved while the energy increases.
    free : bool array, optional
        Unknown cells (default: all inside cells).  Other inside cells are
        held at ``boundary_values``.
    boundary_values : array, optional
        Values of the held cells (full grid).

    Returns
    -------
    SolveResult
    """
    mask = model.mask if mask is None else mask
    free = mask.inside.copy() if free is None else (np.asarray(free, bool) & mask.inside)
    if not free.any():
        raise ValueError("no free cells")
    f = source_density(mu, mask)
    f = np.where(free, f, 0.0)
    disc = _Discretization(mask, free)
    U = np.zeros(mask.grid.shape)
    if boundary_values is not None:
        bv = np.asarray(boundary_values, dtype=float)
        held = mask.inside & ~free
        U[held] = bv[held]
    dv = mask.grid.cell_volume
    hfac = mask.h ** (mask.n - 2)
    flags = {"sigma_clipped": False}
    pmax = float(model.p.values[free].max())
    theta0 = damping if damping is not None else (1.0 if pmax <= 2 else 0.5)

    def residual(Ucur):
        t = disc.t_field(Ucur)
        sig, clipped = _sigma(model, t)
        A, b, bterm = disc.assemble(sig, Ucur, f)
        defect = (A @ Ucur[free] - b) * hfac
        scale = np.abs(f[free]).sum() * dv + np.abs(bterm).sum() * hfac
        return float(np.abs(defect).max() / (scale if scale > 0 else 1.0)), A, b, clipped

    if u0 is not None:
        U[free] = np.asarray(u0, dtype=float)[free]
    else:
        sig0 = np.broadcast_to(model.coeff, U.shape)
        A, b, _ = disc.assemble(sig0, U, f)
        U[free] = spsolve(A.tocsc(), b)
    iters = 1 if u0 is None else 0
    energy = [_energy(model, disc, U, f)]
    res, A, b, clipped = residual(U)
    flags["sigma_clipped"] |= clipped
    backtracks = 0
    while res > tol and iters < max_iter:
        Unew = U.copy()
        Unew[free] = spsolve(A.tocsc(), b)
        iters += 1
        theta = theta0
        J0 = energy[-1]
        while True:
            Ut = U.copy()
            Ut[free] = (1 - theta) * U[free] + theta * Unew[free]
            Jt = _energy(model, disc, Ut, f)
            if Jt <= J0 + 1e-13 * max(1.0, abs(J0)) or theta < 1e-6:
                break
            theta *= 0.5
            backtracks += 1
        U = Ut
        energy.append(Jt)
        res, A, b, clipped = residual(U)
        flags["sigma_clipped"] |= clipped
    flags["backtracks"] = backtracks
    flags["damping"] = theta0
    u = GridFunction(np.where(mask.inside, U, 0.0), mask)
    result = SolveResult(
        u=u,
        Du=gradient(u, dirichlet=True),
        iterations=iters,
        residual=res,
        energy=energy,
        converged=res <= tol,
        model=model,
        free=free,
        f=f,
        flags=flags,
    )
    if raise_on_failure and not result.converged:
        raise SolverFailure(f"no convergence in {max_iter} iterations (residual {res:.3e})", result)
    return result


@dataclass
class SolaResult:
    scales: list
    results: list
    cauchy: np.ndarray
    sup_grad: list


def l1_gradient_distance(r1, r2):
    d = r1.Du.components - r2.Du.components
    mag = np.sqrt((d ** 2).sum(0))
    return float(mag[r1.mask.inside].sum() * r1.mask.grid.cell_volume)


def sola_sequence(model, mu, mask=None, scales=(), **opts):
    """Solve with mu smoothed at each scale; L1 Cauchy table of the gradients."""
    mask = model.mask if mask is None else mask
    scales = [float(k) for k in scales]
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be decreasing")
    if scales and scales[-1] < 2 * mask.h * (1 - 1e-12):
        raise ValueError("scales must be at least 2h")
    results = []
    for k in scales:
        fk = mollify_measure(mu, k, mask)
        results.append(solve_dirichlet(model, fk, mask, **opts))
    m = len(results)
    table = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            table[i, j] = table[j, i] = l1_gradient_distance(results[i], results[j])
    sup = [float(r.Du.magnitude[mask.inside].max()) for r in results]
    return SolaResult(scales, results, table, sup)
