"""Cell-masked domains on uniform grids and flatness certificates.

Cells are indexed with ``ij`` ordering; cell ``(i, j)`` has its centre at
``origin + (i + 0.5, j + 0.5) * h``.  Every domain is padded by a couple of
outside cells so the mask never touches the array edge.
"""

from dataclasses import dataclass, field
from functools import cached_property
import itertools

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._balls import ball_offsets, lattice_ball_size

PAD = 2
MIN_CELLS = 8


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid of cells.

    Parameters
    ----------
    origin : tuple of float
        Lower corner of the cell array.
    shape : tuple of int
        Number of cells per axis.
    h : float
        Cell width.
    """

    origin: tuple
    shape: tuple
    h: float

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if not self.h > 0:
            raise ValueError(f"cell width must be positive, got {self.h}")
        if len(self.origin) != len(self.shape) or len(self.shape) not in (2, 3):
            raise ValueError("grid must be 2-D or 3-D with matching origin/shape")
        if min(self.shape) < MIN_CELLS:
            raise ValueError(f"need at least {MIN_CELLS} cells per axis, got {self.shape}")

    @property
    def n(self):
        return len(self.shape)

    @property
    def extent(self):
        lo = np.asarray(self.origin)
        return np.stack([lo, lo + np.asarray(self.shape) * self.h], axis=1)

    @property
    def cell_volume(self):
        return self.h ** self.n

    def axis_centers(self, axis):
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def mesh(self):
        """Coordinate arrays of cell centres, one per axis."""
        return np.meshgrid(*[self.axis_centers(a) for a in range(self.n)], indexing="ij")

    def centers(self, idx):
        """Centres of cells given as an (m, n) integer index array."""
        idx = np.asarray(idx)
        return np.asarray(self.origin) + (idx + 0.5) * self.h

    def index_of(self, x):
        """Index of the cell containing point ``x`` (may lie off the grid)."""
        x = np.asarray(x, dtype=float)
        return np.floor((x - np.asarray(self.origin)) / self.h).astype(int)

    def contains_index(self, idx):
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=-1)

    def to_dict(self):
        return {"origin": list(self.origin), "shape": list(self.shape), "h": self.h}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["origin"]), tuple(d["shape"]), float(d["h"]))


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Discrete domain: boolean ``inside`` field over a grid.

    ``corners`` lists known non-flat boundary points (box corners) so the
    flatness certifier can report them separately.
    """

    grid: Grid
    inside: np.ndarray
    corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    label: str = "custom"

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != self.grid.shape:
            raise ValueError("inside field does not match grid shape")
        if not inside.any():
            raise ValueError("domain mask is empty")
        # strictly interior: the outer layer of cells must be outside
        edge = np.ones_like(inside)
        edge[tuple(slice(1, -1) for _ in range(inside.ndim))] = False
        if (inside & edge).any():
            raise ValueError("domain touches the grid edge; pad the grid")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)
        corners = np.asarray(self.corners, dtype=float).reshape(-1, self.grid.n)
        object.__setattr__(self, "corners", corners)

    @property
    def n(self):
        return self.grid.n

    @property
    def h(self):
        return self.grid.h

    @property
    def volume(self):
        return float(self.inside.sum()) * self.grid.cell_volume

    @cached_property
    def boundary_mask(self):
        """Inside cells with at least one outside face-neighbour."""
        ins = self.inside
        out = np.zeros_like(ins)
        for ax in range(ins.ndim):
            for sh in (1, -1):
                out |= ins & ~np.roll(ins, sh, axis=ax)
        return out

    @cached_property
    def boundary_cells(self):
        return np.argwhere(self.boundary_mask)

    @cached_property
    def boundary_faces(self):
        """Midpoints and outward normals of faces between inside and outside cells."""
        ins = self.inside
        pts, normals = [], []
        for ax in range(ins.ndim):
            for sh in (1, -1):
                # neighbour in direction +sh along ax is outside
                nb_out = ~np.roll(ins, -sh, axis=ax)
                idx = np.argwhere(ins & nb_out)
                if len(idx) == 0:
                    continue
                e = np.zeros(ins.ndim)
                e[ax] = sh
                pts.append(self.grid.centers(idx) + 0.5 * self.h * e)
                normals.append(np.tile(e, (len(idx), 1)))
        pts = np.concatenate(pts)
        normals = np.concatenate(normals)
        order = np.lexsort(pts.T[::-1])
        return pts[order], normals[order]

    @cached_property
    def diameter(self):
        """Largest distance between two inside cell centres."""
        # extreme points of the inside set are always boundary cells
        pts = self.grid.centers(self.boundary_cells)
        if len(pts) > self.n + 1:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except QhullError:
                pass
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def centers(self):
        """Centres of all inside cells, (m, n)."""
        return self.grid.centers(np.argwhere(self.inside))

    def cell_at(self, x):
        idx = self.grid.index_of(x)
        if not self.grid.contains_index(idx):
            return None
        return tuple(int(i) for i in idx)

    def same_as(self, other):
        return (self.grid == other.grid) and np.array_equal(self.inside, other.inside)


def _parse_extent(extent):
    ext = np.asarray(extent, dtype=float)
    if ext.ndim == 1:
        ext = ext.reshape(-1, 2)
    if ext.ndim != 2 or ext.shape[1] != 2 or ext.shape[0] not in (2, 3):
        raise ValueError("extent must be [(lo, hi), ...] for 2 or 3 axes")
    widths = ext[:, 1] - ext[:, 0]
    if np.any(widths <= 0):
        raise ValueError(f"degenerate extent {ext.tolist()}: every width must be positive")
    return ext, widths


def _box_grid(extent, h):
    ext, widths = _parse_extent(extent)
    if not h > 0:
        raise ValueError("h must be positive")
    counts = widths / h
    rc = np.rint(counts)
    if np.any(np.abs(counts - rc) > 1e-9 * np.maximum(counts, 1.0)):
        raise ValueError(f"h={h} does not divide the extent widths {widths.tolist()}")
    rc = rc.astype(int)
    grid = Grid(tuple(ext[:, 0] - PAD * h), tuple(rc + 2 * PAD), h)
    return grid, ext, rc


def make_rect_domain(extent, h):
    """Axis-aligned box domain.

    Parameters
    ----------
    extent : array_like
        ``[(x0, x1), (y0, y1)]`` (optionally a third axis).
    h : float
        Cell width; must divide each side length.

    Returns
    -------
    DomainMask
    """
    grid, ext, rc = _box_grid(extent, h)
    inside = np.zeros(grid.shape, dtype=bool)
    inside[tuple(slice(PAD, PAD + c) for c in rc)] = True
    corners = np.array(list(itertools.product(*ext)))
    return DomainMask(grid, inside, corners, "rect")


def sawtooth_profile(t):
    """Triangle wave with tri(0) = 0 and tri(1/2) = 1, period 1."""
    frac = np.mod(t, 1.0)
    return 1.0 - np.abs(1.0 - 2.0 * frac)


def make_sawtooth_domain(extent, h, amplitude, period):
    """Box whose lower side (last axis) is replaced by a sawtooth.

    The lower boundary is ``y0 + amplitude * period * tri((x - x0) / period)``,
    so the teeth have height ``amplitude * period`` and slope ``2 * amplitude``.
    """
    if not 0 <= amplitude < 0.25:
        raise ValueError(f"amplitude must lie in [0, 1/4), got {amplitude}")
    if period < 4 * h * (1 - 1e-12):
        raise ValueError(f"period {period} is below 4h = {4 * h}")
    dom = make_rect_domain(extent, h)
    if amplitude == 0:
        return DomainMask(dom.grid, dom.inside, dom.corners, "sawtooth")
    grid = dom.grid
    xs = grid.mesh()
    ext, _ = _parse_extent(extent)
    bottom = ext[-1, 0] + amplitude * period * sawtooth_profile((xs[0] - ext[0, 0]) / period)
    inside = dom.inside & (xs[-1] > bottom)
    return DomainMask(grid, inside, dom.corners, "sawtooth")


def make_disk_domain(center, radius, h, n=2):
    """Ball of given radius, discretized by centre membership."""
    center = np.asarray(center, dtype=float).reshape(n)
    m = int(np.ceil(radius / h))
    grid = Grid(tuple(center - (m + PAD) * h), (2 * (m + PAD),) * n, h)
    xs = grid.mesh()
    d2 = sum((xs[a] - center[a]) ** 2 for a in range(n))
    return DomainMask(grid, d2 < radius ** 2, np.zeros((0, n)), "disk")


@dataclass
class ReifenbergCertificate:
    """Measured two-sided flatness of a mask.

    ``deviations[k]`` is the smallest sandwich violation (in units of the
    radius) over the scanned normals for the sample ``(points[k], radii[k])``.
    """

    delta: float
    R0: float
    points: np.ndarray
    radii: np.ndarray
    normals: np.ndarray
    deviations: np.ndarray
    n_dirs: int
    n_radii: int
    excluded: int = 0

    @property
    def samples(self):
        return list(zip(self.points, self.radii, self.normals, self.deviations))

    def to_dict(self):
        return {
            "delta": self.delta,
            "R0": self.R0,
            "n_dirs": self.n_dirs,
            "n_radii": self.n_radii,
            "n_samples": int(len(self.radii)),
            "excluded": self.excluded,
            "radii": sorted(set(float(r) for r in self.radii)),
        }


def scan_directions(n, n_dirs):
    """Unit normals: uniform angles in 2-D, a Fibonacci sphere in 3-D."""
    if n == 2:
        th = 2 * np.pi * np.arange(n_dirs) / n_dirs
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    k = np.arange(n_dirs) + 0.5
    z = 1 - 2 * k / n_dirs
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z ** 2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def _extreme_points(pts):
    # a linear functional attains its max over a finite set on the hull
    if len(pts) <= pts.shape[1] + 1:
        return pts
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:
        return pts


def sandwich_violation(y_in, y_out, r, dirs):
    """Violation of the two-sided slab condition for each candidate normal.

    ``y_in``/``y_out`` are positions of inside/outside cells relative to the
    base point.  A normal ``nu`` (pointing into the domain) is admissible at
    level ``d`` when outside cells satisfy ``y.nu <= d r`` and inside cells
    satisfy ``y.nu >= -d r``.
    """
    viol = np.zeros(len(dirs))
    if len(y_out):
        viol = np.maximum(viol, (_extreme_points(y_out) @ dirs.T).max(axis=0) / r)
    if len(y_in):
        viol = np.maximum(viol, (-_extreme_points(y_in) @ dirs.T).max(axis=0) / r)
    return viol


def _pick_normal(y_in, y_out, r, dirs, viol):
    # among tied best directions prefer the centre of the tied set
    best = viol.min()
    tied = dirs[viol <= best + 1e-12]
    k = int(np.argmin(viol))
    if len(tied) > 1:
        m = tied.mean(axis=0)
        norm = np.linalg.norm(m)
        if norm > 0.5:
            m = m / norm
            vm = float(sandwich_violation(y_in, y_out, r, m[None, :])[0])
            if vm <= best + 1e-12:
                return m, vm
            return tied[np.argmax(tied @ m)], float(best)
    return dirs[k], float(viol[k])


def certify_reifenberg(mask, R0, n_dirs=180, n_radii=3, points=None, exclude_corners=True):
    """Measure the (delta, R0) flatness of a mask.

    Parameters
    ----------
    mask : DomainMask
    R0 : float
        Largest radius; radii are ``R0 * 2**-k`` for ``k < n_radii`` while
        they stay at or above ``4h``.
    n_dirs : int
        Number of scanned normals.  Doubling it keeps the previous set.
    n_radii : int
    points : array_like, optional
        Boundary points to test.  Defaults to all boundary face midpoints.
    exclude_corners : bool
        Skip balls that contain one of ``mask.corners``.

    Returns
    -------
    ReifenbergCertificate
    """
    grid, h, n = mask.grid, mask.h, mask.n
    if len(mask.boundary_cells) == 0:
        raise ValueError("mask has no boundary cells")
    if R0 < 4 * h * (1 - 1e-12):
        raise ValueError(f"R0={R0} below resolution limit 4h={4 * h}")
    if R0 > mask.diameter * (1 + 1e-12):
        raise ValueError(f"R0={R0} exceeds the domain diameter {mask.diameter}")
    if n == 2 and n_dirs < 16:
        raise ValueError("need n_dirs >= 16 in 2-D")
    radii = [R0 * 2.0 ** -k for k in range(max(int(n_radii), 1))]
    radii = [r for r in radii if r >= 4 * h * (1 - 1e-12)]
    if points is None:
        points = mask.boundary_faces[0]
    points = np.asarray(points, dtype=float).reshape(-1, n)
    dirs = scan_directions(n, n_dirs)
    origin = np.asarray(grid.origin)

    out_pts, out_r, out_nu, out_dev = [], [], [], []
    excluded = 0
    for r in radii:
        m = int(np.ceil(r / h)) + 1
        win = np.array(list(itertools.product(range(-m, m + 1), repeat=n)))
        for x in points:
            if exclude_corners and len(mask.corners):
                if np.any(np.linalg.norm(mask.corners - x, axis=1) < r):
                    excluded += 1
                    continue
            base = np.floor((x - origin) / h).astype(int)
            idx = base + win
            y = origin + (idx + 0.5) * h - x
            keep = (y ** 2).sum(1) < r * r
            idx, y = idx[keep], y[keep]
            ok = grid.contains_index(idx)
            ins = np.zeros(len(idx), dtype=bool)
            ins[ok] = mask.inside[tuple(idx[ok].T)]
            viol = sandwich_violation(y[ins], y[~ins], r, dirs)
            nu, dv = _pick_normal(y[ins], y[~ins], r, dirs, viol)
            out_pts.append(x)
            out_r.append(r)
            out_nu.append(nu)
            out_dev.append(dv)
    if not out_dev:
        raise ValueError("every sample was excluded; lower R0 or keep corners")
    dev = np.array(out_dev)
    return ReifenbergCertificate(
        delta=float(dev.max()),
        R0=float(R0),
        points=np.array(out_pts),
        radii=np.array(out_r),
        normals=np.array(out_nu),
        deviations=dev,
        n_dirs=int(n_dirs),
        n_radii=int(n_radii),
        excluded=excluded,
    )


def density_ratio(mask, x, r):
    """|B_r(x)| / |B_r(x) cap Omega| by cell counting.

    ``x`` must be (the centre of) an inside cell; the full ball is counted on
    the infinite lattice so cells beyond the grid count as outside.
    """
    cell = mask.cell_at(x)
    if cell is None or not mask.inside[cell]:
        raise ValueError(f"point {x} is not in an inside cell")
    if not 0 < r:
        raise ValueError("radius must be positive")
    offs, _ = ball_offsets(r, mask.h, mask.n)
    idx = np.asarray(cell) + offs
    ok = mask.grid.contains_index(idx)
    hits = int(mask.inside[tuple(idx[ok].T)].sum())
    if hits == 0:
        raise ValueError("ball misses the domain on this grid")
    return lattice_ball_size(r, mask.h, mask.n) / hits
