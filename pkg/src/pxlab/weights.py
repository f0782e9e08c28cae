"""Muckenhoupt weights: A_p constants and A_infinity decay constants."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid


@dataclass(eq=False)
class WeightField:
    """Positive weight sampled at every cell centre of a grid."""

    grid: Grid
    values: np.ndarray
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("weight shape does not match grid")
        if not np.all(self.values > 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("weight must be positive and finite")

    def scaled(self, t):
        return WeightField(self.grid, self.values * t, self.family, dict(self.params, scale=t))

    def mass(self, cells):
        """w(E) for a boolean cell set."""
        return float(self.values[cells].sum() * self.grid.cell_volume)


@dataclass
class AInftyConstants:
    kappa_w: float
    c_w: float
    n_samples: int
    max_residual: float
    seed: int = 0


class AInftyFailure(ValueError):
    """No (kappa, c) pair with moderate c fits the sampled decay data."""


def _grid_of(obj):
    return obj if isinstance(obj, Grid) else obj.grid


def power_weight(alpha, center, grid):
    """w(x) = max(|x - center|, h/2)^alpha on every cell of ``grid``."""
    grid = _grid_of(grid)
    if alpha <= -grid.n:
        raise ValueError(f"alpha={alpha} <= -n: weight not locally integrable")
    xs = grid.mesh()
    d = np.sqrt(sum((xs[a] - center[a]) ** 2 for a in range(grid.n)))
    vals = np.maximum(d, grid.h / 2) ** alpha
    return WeightField(grid, vals, "power", {"alpha": float(alpha), "center": [float(c) for c in center]})


def constant_weight(grid, value=1.0):
    grid = _grid_of(grid)
    return WeightField(grid, np.full(grid.shape, float(value)), "constant", {"value": float(value)})


def _ball_cells(grid, center, r):
    """Indices of grid cells in B_r(center), or None if the ball leaves the grid."""
    c = grid.index_of(center)
    # exact centre distances, since the ball centre may be off-lattice
    m = int(np.ceil(r / grid.h)) + 1
    ring = np.array(np.meshgrid(*[np.arange(-m, m + 1)] * grid.n, indexing="ij")).reshape(grid.n, -1).T
    idx = c + ring
    y = grid.centers(idx) - np.asarray(center, dtype=float)
    idx = idx[(y ** 2).sum(1) < r * r]
    if len(idx) == 0 or not np.all(grid.contains_index(idx)):
        return None
    return idx


def sample_balls(grid, count, seed=0, rmin=None, rmax=None):
    """Random balls fully inside the grid, radii log-uniform in [rmin, rmax]."""
    grid = _grid_of(grid)
    rng = np.random.default_rng(seed)
    h = grid.h
    ext = grid.extent
    width = float((ext[:, 1] - ext[:, 0]).min())
    rmin = 2 * h if rmin is None else rmin
    rmax = width / 4 if rmax is None else rmax
    out = []
    while len(out) < count:
        r = float(np.exp(rng.uniform(np.log(rmin), np.log(rmax))))
        lo = ext[:, 0] + r + h
        hi = ext[:, 1] - r - h
        if np.any(hi <= lo):
            continue
        out.append((rng.uniform(lo, hi), r))
    return out


def centered_balls(center, radii):
    return [(np.asarray(center, dtype=float), float(r)) for r in radii]


def ap_constant(w, p, balls):
    """Largest sampled A_p product (mean w)(mean w^(-1/(p-1)))^(p-1).

    For ``p == 1`` the product is (mean w) / (min w) over each ball.  Balls
    leaving the grid are skipped.
    """
    if p < 1:
        raise ValueError(f"A_p needs p >= 1, got {p}")
    if not len(balls):
        raise ValueError("need at least one ball")
    best = 0.0
    for center, r in balls:
        idx = _ball_cells(w.grid, center, r)
        if idx is None:
            continue
        v = w.values[tuple(idx.T)]
        if p == 1:
            val = v.mean() / v.min()
        else:
            val = v.mean() * np.mean(v ** (-1.0 / (p - 1))) ** (p - 1)
        best = max(best, float(val))
    return best


def draw_decay_samples(w, count, seed=0):
    """Random (ball, E subset of ball) pairs; returns |E|/|B| and w(E)/w(B).

    E alternates between random sub-rectangles of the ball, superlevel sets
    and sublevel sets of w inside the ball.
    """
    grid = w.grid
    rng = np.random.default_rng(seed)
    balls = sample_balls(grid, count, seed=rng.integers(2**31))
    a = np.empty(count)
    b = np.empty(count)
    k = 0
    i = 0
    while k < count:
        center, r = balls[i % len(balls)]
        i += 1
        idx = _ball_cells(grid, center, r)
        if idx is None:
            continue
        v = w.values[tuple(idx.T)]
        kind = k % 3
        if kind == 0:
            lo_i = idx.min(0)
            hi_i = idx.max(0)
            cut = np.sort(rng.integers(lo_i, hi_i + 1, size=(2, grid.n)), axis=0)
            sel = np.all((idx >= cut[0]) & (idx <= cut[1]), axis=1)
        else:
            t = np.quantile(v, rng.uniform(0.02, 0.98))
            sel = v >= t if kind == 1 else v <= t
        if not sel.any():
            continue
        a[k] = sel.sum() / len(v)
        b[k] = v[sel].sum() / v.sum()
        k += 1
    return a, b


def _c_of_kappa(a, b, kappas):
    # c(kappa) = smallest c >= 1 with b <= c a^kappa on every sample
    with np.errstate(divide="ignore"):
        ratio = np.log(b)[None, :] - kappas[:, None] * np.log(a)[None, :]
    return np.maximum(1.0, np.exp(ratio.max(axis=1)))


def fit_ainfty_constants(w, samples=400, seed=0, c_max=1e6):
    """Fit (kappa_w, c_w) with w(E) <= c_w (|E|/|B|)^kappa_w w(B) on samples.

    For each kappa in {0.01, ..., 1} the minimal admissible c(kappa) is
    computed.  Since c(kappa) never decreases with kappa, the pair is chosen
    by the smallest log(c)/kappa (ties go to the larger kappa), which is the
    decay profile that bites earliest as |E|/|B| shrinks.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    a, b = draw_decay_samples(w, samples, seed)
    kappas = np.arange(1, 101) / 100.0
    cs = _c_of_kappa(a, b, kappas)
    ok = cs < c_max
    if not ok.any():
        raise AInftyFailure(f"no kappa gives c < {c_max:g}; smallest c = {cs.min():.3g}")
    score = np.where(ok, np.log(cs) / kappas, np.inf)
    best = np.flatnonzero(score <= score.min() + 1e-12)[-1]
    kappa, c = float(kappas[best]), float(cs[best])
    resid = float(np.max(b - c * a ** kappa))
    return AInftyConstants(kappa, c, samples, resid, seed)


def validate_ainfty(w, consts, samples=400, seed=1, slack=1.0):
    """Fraction of fresh samples obeying w(E) <= slack c_w (|E|/|B|)^kappa_w w(B)."""
    a, b = draw_decay_samples(w, samples, seed)
    ok = b <= slack * consts.c_w * a ** consts.kappa_w * (1 + 1e-12)
    return float(ok.mean())
