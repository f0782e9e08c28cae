"""Variable-exponent Lebesgue machinery on masked grids."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ._balls import ball_sum, dyadic_radii
from .geometry import DomainMask


class LogHolderViolation(ValueError):
    """Raised when a sampled oscillation of p exceeds the tabulated modulus."""

    def __init__(self, x, y, jump, omega):
        self.x, self.y, self.jump, self.omega = x, y, jump, omega
        super().__init__(
            f"|p(x)-p(y)| = {jump:.4g} exceeds omega(|x-y|) = {omega:.4g} "
            f"at x={np.round(x, 6).tolist()}, y={np.round(y, 6).tolist()}"
        )


@dataclass(eq=False)
class ExponentField:
    """Exponent p(.) (or q(.)) on the whole grid with its modulus of continuity.

    ``values`` covers every grid cell so ball operations may look outside the
    mask.  ``radii``/``omega`` tabulate a non-decreasing modulus.
    """

    mask: DomainMask
    values: np.ndarray
    gamma_lo: float
    gamma_hi: float
    radii: np.ndarray
    omega: np.ndarray
    tag: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mask.grid.shape:
            raise ValueError("exponent values must cover the full grid")
        v = self.values[self.mask.inside]
        if v.min() < self.gamma_lo - 1e-12 or v.max() > self.gamma_hi + 1e-12:
            raise ValueError(
                f"exponent range [{v.min():.4g}, {v.max():.4g}] outside "
                f"[{self.gamma_lo}, {self.gamma_hi}]"
            )
        self.radii = np.asarray(self.radii, dtype=float)
        self.omega = np.maximum.accumulate(np.asarray(self.omega, dtype=float))

    def modulus(self, r):
        """Tabulated omega, interpolated in log r; omega(0) = omega(radii[0])."""
        r = np.asarray(r, dtype=float)
        lr = np.log(np.maximum(r, self.radii[0]))
        return np.interp(lr, np.log(self.radii), self.omega)

    @property
    def inside_values(self):
        return self.values[self.mask.inside]

    def range_on(self, cells):
        v = self.values[cells]
        return float(v.min()), float(v.max())

    def is_constant(self):
        v = self.inside_values
        return bool(np.ptp(v) == 0)

    def check_p_bounds(self):
        n = self.mask.n
        if not self.gamma_lo > 2 - 1 / n:
            raise ValueError(f"p exponent needs gamma_lo > 2 - 1/n, got {self.gamma_lo}")


def _radius_table(mask, num=200):
    return np.geomspace(mask.h, max(mask.diameter, 2 * mask.h) * 2, num)


def constant_exponent(mask, p0):
    r = _radius_table(mask)
    return ExponentField(
        mask, np.full(mask.grid.shape, float(p0)), p0, p0, r, np.zeros_like(r),
        "constant", {"p0": float(p0)},
    )


def log_modulus(r, c):
    """omega(r) = c / log(e + 1/r) with omega(0) = 0."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(r > 0, c / np.log(np.e + 1.0 / np.maximum(r, 1e-300)), 0.0)


def log_holder_exponent(mask, base, c, x0, gamma_lo=None, gamma_hi=None):
    """p(x) = base + c / log(e + 1/|x - x0|) with the matching modulus.

    The radial profile t -> 1/log(e + 1/t) is increasing, concave and
    vanishes at 0, hence subadditive, so omega = c/log(e + 1/r) dominates
    the oscillation of p.
    """
    xs = mask.grid.mesh()
    d = np.sqrt(sum((xs[a] - x0[a]) ** 2 for a in range(mask.n)))
    vals = base + log_modulus(d, c)
    r = _radius_table(mask)
    lo = float(vals[mask.inside].min()) if gamma_lo is None else gamma_lo
    hi = float(vals[mask.inside].max()) if gamma_hi is None else gamma_hi
    return ExponentField(
        mask, vals, lo, hi, r, log_modulus(r, abs(c)), "log-holder",
        {"base": float(base), "c": float(c), "x0": [float(v) for v in x0]},
    )


def _pair_offsets(n, h, rmax, n_dir=16):
    # every small offset, plus dyadic radii in n_dir directions
    offs = set()
    for o in np.ndindex(*(7,) * n):
        o = tuple(int(v) - 3 for v in o)
        if any(o):
            offs.add(o)
    th = 2 * np.pi * np.arange(n_dir) / n_dir
    for r in dyadic_radii(4 * h, rmax):
        m = r / h
        for t in th:
            if n == 2:
                v = (m * np.cos(t), m * np.sin(t))
            else:
                v = (m * np.cos(t), m * np.sin(t), 0.0)
            o = tuple(int(round(c)) for c in v)
            if any(o):
                offs.add(o)
    return sorted(offs)


@dataclass
class LogHolderReport:
    bound: float
    R_omega: float
    crossing: float
    pairs_checked: int

    def __iter__(self):
        # unpacks as (bound, R_omega)
        return iter((self.bound, self.R_omega))


def check_log_holder(p, atol=1e-12):
    """Check that the tabulated modulus dominates sampled oscillations of p.

    Returns
    -------
    LogHolderReport
        ``bound`` is the sup of omega(r) log(1/r) over tabulated r < 1.
        ``R_omega`` is the largest tabulated radius such that
        omega(r) log(1/r) <= 1/2 for every tabulated r below it (capped by
        the domain diameter).  ``crossing`` is the smallest radius beyond
        which the product stays <= 1/2.

    Raises
    ------
    LogHolderViolation
        With a witness pair when |p(x) - p(y)| > omega(|x - y|).
    """
    mask = p.mask
    h = mask.h
    if p.radii[0] > h * (1 + 1e-9):
        raise ValueError("modulus must be tabulated down to r = h")
    ins = mask.inside
    idx = np.argwhere(ins)
    shape = np.asarray(mask.grid.shape)
    count = 0
    for o in _pair_offsets(mask.n, h, mask.diameter):
        o = np.asarray(o)
        j = idx + o
        ok = np.all((j >= 0) & (j < shape), axis=1)
        a, b = idx[ok], j[ok]
        keep = ins[tuple(b.T)]
        a, b = a[keep], b[keep]
        if len(a) == 0:
            continue
        count += len(a)
        jump = np.abs(p.values[tuple(a.T)] - p.values[tuple(b.T)])
        om = float(p.modulus(np.linalg.norm(o) * h))
        bad = jump > om + atol
        if bad.any():
            k = int(np.argmax(jump - om))
            raise LogHolderViolation(
                mask.grid.centers(a[k]), mask.grid.centers(b[k]), float(jump[k]), om
            )
    r = p.radii
    prod = p.omega * np.log(1.0 / r)
    small = r < 1
    bound = float(max(prod[small].max(), 0.0)) if small.any() else 0.0
    cap = mask.diameter
    over = np.flatnonzero(prod > 0.5)
    R_omega = cap if len(over) == 0 else float(min(r[over[0]], cap))
    crossing = 0.0 if len(over) == 0 else float(r[min(over[-1] + 1, len(r) - 1)])
    return LogHolderReport(bound, R_omega, crossing, count)


@dataclass(eq=False)
class GridFunction:
    """Scalar field on a mask; values outside the mask are ignored (kept 0)."""

    values: np.ndarray
    mask: DomainMask

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.mask.grid.shape:
            raise ValueError("grid function shape does not match grid")
        v[~self.mask.inside] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values on the mask")
        self.values = v

    @classmethod
    def from_callable(cls, mask, fn):
        return cls(fn(*mask.grid.mesh()), mask)

    @property
    def inside_values(self):
        return self.values[self.mask.inside]

    def __mul__(self, c):
        return GridFunction(self.values * c, self.mask)

    __rmul__ = __mul__


@dataclass(eq=False)
class GradientField:
    components: np.ndarray
    mask: DomainMask
    scheme: str = "central"

    @property
    def magnitude(self):
        return np.sqrt((self.components ** 2).sum(axis=0))

    def __sub__(self, other):
        return GradientField(self.components - other.components, self.mask, self.scheme)


def _vals(f, mask=None):
    if isinstance(f, GridFunction):
        return f.values, f.mask
    return np.asarray(f, dtype=float), mask


def gradient(u, dirichlet=False):
    """Cell gradient by finite differences.

    Central differences where both axis neighbours are inside, one-sided
    where only one is.  With ``dirichlet=True`` an outside neighbour acts as
    a mirror ghost with value ``-u`` (zero on the shared face), so every
    inside cell gets a central stencil.
    """
    mask = u.mask
    ins = mask.inside
    h = mask.h
    uv = np.where(ins, u.values, 0.0)
    comps = np.zeros((mask.n,) + ins.shape)
    for ax in range(mask.n):
        up = np.roll(uv, -1, axis=ax)
        dn = np.roll(uv, 1, axis=ax)
        iu = np.roll(ins, -1, axis=ax)
        idn = np.roll(ins, 1, axis=ax)
        if dirichlet:
            up = np.where(iu, up, -uv)
            dn = np.where(idn, dn, -uv)
            g = (up - dn) / (2 * h)
        else:
            g = np.zeros_like(uv)
            both = iu & idn
            g[both] = (up - dn)[both] / (2 * h)
            only_u = iu & ~idn
            g[only_u] = (up - uv)[only_u] / h
            only_d = idn & ~iu
            g[only_d] = (uv - dn)[only_d] / h
        comps[ax] = np.where(ins, g, 0.0)
    return GradientField(comps, mask, "central-ghost" if dirichlet else "central")


def modular(f, p):
    """Cell sum of |f|^p(x) h^n over the mask."""
    fv, _ = _vals(f)
    mask = p.mask
    ins = mask.inside
    return float(np.sum(np.abs(fv[ins]) ** p.values[ins]) * mask.grid.cell_volume)


def luxemburg_norm(f, p, tol=1e-8):
    """Luxemburg norm inf{lam > 0 : modular(f / lam) <= 1}.

    Root-finds ``modular(f/lam) = 1`` in ``log lam`` on a bracket built from
    max|f| and the mask volume, to relative width ``tol``.
    """
    fv, _ = _vals(f)
    mask = p.mask
    ins = mask.inside
    a = np.abs(fv[ins])
    pv = p.values[ins]
    M = float(a.max()) if a.size else 0.0
    if M == 0:
        return 0.0
    dv = mask.grid.cell_volume

    def g(t):
        return float(np.sum((a / np.exp(t)) ** pv) * dv) - 1.0

    vol = a.size * dv
    hi = np.log(M * max(1.0, vol ** (1.0 / pv.min())))
    while g(hi) > 0:
        hi += 1.0
    lo = hi - np.log(2.0)
    while g(lo) <= 0:
        lo -= np.log(2.0)
    if g(hi) == 0:
        return float(np.exp(hi))
    t = brentq(g, lo, hi, xtol=tol * 0.1, rtol=4 * np.finfo(float).eps)
    return float(np.exp(t))


def check_unit_ball_equiv(f, p, tol=1e-8):
    """Return ``(norm <= 1, modular <= 1)``."""
    return luxemburg_norm(f, p, tol) <= 1.0, modular(f, p) <= 1.0


def morrey_norm(f, q, lam, centers=None, radii=None):
    """Sampled Morrey norm sup r^(-lam/q) ||f||_{L^q(B_r(x) cap Omega)}.

    Parameters
    ----------
    f : GridFunction
    q, lam : float
    centers : array_like, optional
        Points; defaults to every inside cell centre.
    radii : array_like, optional
        Defaults to dyadic radii from h up to the diameter.
    """
    if not 0 < q < np.inf:
        raise ValueError("need 0 < q < inf")
    mask = f.mask
    if not 0 < lam < mask.n:
        raise ValueError("need 0 < lambda < n")
    h = mask.h
    ins = mask.inside
    if radii is None:
        radii = dyadic_radii(h, mask.diameter)
    if centers is None:
        cells = ins.copy()
    else:
        cells = np.zeros_like(ins)
        for x in np.atleast_2d(centers):
            c = mask.cell_at(x)
            if c is not None:
                cells[c] = True
    g = np.where(ins, np.abs(f.values) ** q, 0.0)
    best = 0.0
    if not g.any():
        return best
    for r in radii:
        s = np.maximum(ball_sum(g, r, h), 0.0)
        cnt = ball_sum(ins.astype(float), r, h)
        valid = cells & (cnt > 0.5)
        if not valid.any():
            continue
        val = (s[valid].max() * h ** mask.n) ** (1.0 / q) * r ** (-lam / q)
        best = max(best, float(val))
    return best


def weighted_modular(f, q, w):
    """Cell sum of |f|^q(x) w(x) h^n over the mask."""
    fv, _ = _vals(f)
    mask = q.mask
    wv = w.values if hasattr(w, "values") else np.asarray(w, dtype=float)
    ins = mask.inside
    if np.any(wv[ins] <= 0):
        raise ValueError("weight must be positive on the mask")
    return float(np.sum(np.abs(fv[ins]) ** q.values[ins] * wv[ins]) * mask.grid.cell_volume)
