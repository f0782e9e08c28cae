"""Maximal operators and the first-order Riesz potential on grids."""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from ._balls import ball_sum, dyadic_radii
from .funcspace import GridFunction


@dataclass(eq=False)
class RadonMeasure:
    """Finite nonnegative measure: point atoms plus an optional cell density.

    Parameters
    ----------
    atoms : (k, n) array
        Atom positions.
    masses : (k,) array
        Atom masses, all >= 0.
    density : GridFunction, optional
        Absolutely continuous part (per unit volume).
    """

    atoms: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    masses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density: GridFunction = None

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if self.density is not None:
            n = self.density.mask.n
        else:
            n = np.shape(self.atoms)[-1] if np.size(self.atoms) else 2
        self.atoms = np.asarray(self.atoms, dtype=float).reshape(-1, n)
        if len(self.atoms) != len(self.masses):
            raise ValueError("atoms and masses differ in length")
        if np.any(self.masses < 0):
            raise ValueError("atom masses must be nonnegative")
        if self.density is not None and np.any(self.density.inside_values < 0):
            raise ValueError("density must be nonnegative")

    @property
    def n(self):
        return self.atoms.shape[1]

    @property
    def atom_mass(self):
        return float(self.masses.sum())

    @property
    def density_mass(self):
        if self.density is None:
            return 0.0
        return float(self.density.values.sum() * self.density.mask.grid.cell_volume)

    @property
    def total_mass(self):
        return self.atom_mass + self.density_mass

    def is_zero(self):
        return self.total_mass == 0.0

    def scaled(self, t):
        dens = None if self.density is None else GridFunction(self.density.values * t, self.density.mask)
        return RadonMeasure(self.atoms.copy(), self.masses * t, dens)

    def restricted(self, cells, grid):
        """Restriction to a boolean cell set (atoms by the cell containing them)."""
        keep = np.zeros(len(self.atoms), dtype=bool)
        for i, p in enumerate(self.atoms):
            idx = grid.index_of(p)
            keep[i] = bool(grid.contains_index(idx) and cells[tuple(idx)])
        dens = None
        if self.density is not None:
            dens = GridFunction(np.where(cells, self.density.values, 0.0), self.density.mask)
        return RadonMeasure(self.atoms[keep], self.masses[keep], dens)

    def mass_on(self, cells, grid):
        return self.restricted(cells, grid).total_mass

    def to_dict(self):
        return {
            "atoms": [list(map(float, p)) + [float(m)] for p, m in zip(self.atoms, self.masses)],
            "density_mass": self.density_mass,
        }


def zero_measure(n=2):
    return RadonMeasure(np.zeros((0, n)), np.zeros(0), None)


def dirac(point, mass=1.0):
    point = np.asarray(point, dtype=float).reshape(1, -1)
    return RadonMeasure(point, np.array([mass]), None)


def _density_values(mu, grid):
    if mu.density is None:
        return None
    if mu.density.mask.grid != grid:
        raise ValueError("density lives on a different grid")
    return mu.density.values


def ball_mass(mu, x, r, grid=None):
    """|mu|(B_r(x)) with atoms counted when |p - x| < r."""
    if not r > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    m = 0.0
    if len(mu.atoms):
        d = np.linalg.norm(mu.atoms - x, axis=1)
        m += float(mu.masses[d < r].sum())
    if mu.density is not None:
        g = mu.density.mask.grid
        xs = g.mesh()
        d2 = sum((xs[a] - x[a]) ** 2 for a in range(g.n))
        m += float(mu.density.values[d2 < r * r].sum() * g.cell_volume)
    return m


def default_radii(grid):
    ext = grid.extent
    diam = float(np.linalg.norm(ext[:, 1] - ext[:, 0]))
    return dyadic_radii(grid.h, diam)


def _atom_ball_mass(mu, grid, r):
    out = np.zeros(grid.shape)
    if not len(mu.atoms):
        return out
    xs = grid.mesh()
    for p, m in zip(mu.atoms, mu.masses):
        d2 = sum((xs[a] - p[a]) ** 2 for a in range(grid.n))
        out += np.where(d2 < r * r, m, 0.0)
    return out


def ball_mass_field(mu, grid, r):
    """|mu|(B_r(x)) at every cell centre x."""
    out = _atom_ball_mass(mu, grid, r)
    dens = _density_values(mu, grid)
    if dens is not None:
        out += np.maximum(ball_sum(dens, r, grid.h), 0.0) * grid.cell_volume
    return out


def frac_maximal_1(mu, grid, radii=None):
    """Centred first-order fractional maximal function on the cell centres.

    M_1(mu)(x) = max_r |mu|(B_r(x)) / r^(n-1) over the sampled radii.
    """
    radii = default_radii(grid) if radii is None else np.asarray(radii, dtype=float)
    n = grid.n
    out = np.zeros(grid.shape)
    if mu.is_zero():
        return out
    for r in radii:
        np.maximum(out, ball_mass_field(mu, grid, r) / r ** (n - 1), out=out)
    return out


def hl_maximal(f, radii=None, grid=None):
    """Centred Hardy-Littlewood maximal function.

    ``f`` is a GridFunction (zero outside its mask) or a full-grid array.
    Averages are taken over the ball cells that lie in the grid.
    """
    if isinstance(f, GridFunction):
        vals, grid = f.values, f.mask.grid
    else:
        vals = np.asarray(f, dtype=float)
    if np.any(vals < 0):
        raise ValueError("hl_maximal needs f >= 0")
    if grid is None:
        raise ValueError("pass a grid with array input")
    radii = default_radii(grid) if radii is None else np.asarray(radii, dtype=float)
    ones = np.ones(grid.shape)
    out = vals.copy()
    if not vals.any():
        return out
    for r in radii:
        s = np.maximum(ball_sum(vals, r, grid.h), 0.0)
        c = np.rint(ball_sum(ones, r, grid.h))
        np.maximum(out, s / np.maximum(c, 1.0), out=out)
    return out


def riesz_kernel(grid, reach_cells=None):
    """Kernel 1 / max(|y|, h/2)^(n-1) on a centred cell block."""
    n, h = grid.n, grid.h
    m = max(grid.shape) if reach_cells is None else reach_cells
    axes = [np.arange(-m, m + 1) * h] * n
    ys = np.meshgrid(*axes, indexing="ij")
    d = np.sqrt(sum(y ** 2 for y in ys))
    return 1.0 / np.maximum(d, h / 2) ** (n - 1)


def riesz_potential_1(mu, grid):
    """I_1(mu)(x) = int d|mu|(y) / |x - y|^(n-1), distance floored at h/2."""
    n, h = grid.n, grid.h
    out = np.zeros(grid.shape)
    if len(mu.atoms):
        xs = grid.mesh()
        for p, m in zip(mu.atoms, mu.masses):
            d = np.sqrt(sum((xs[a] - p[a]) ** 2 for a in range(n)))
            out += m / np.maximum(d, h / 2) ** (n - 1)
    dens = _density_values(mu, grid)
    if dens is not None and dens.any():
        k = riesz_kernel(grid)
        out += np.maximum(fftconvolve(dens, k, mode="same"), 0.0) * grid.cell_volume
    return out


def atom_cells(mu, grid):
    """Boolean field marking cells that contain an atom."""
    out = np.zeros(grid.shape, dtype=bool)
    for p in mu.atoms:
        idx = grid.index_of(p)
        if grid.contains_index(idx):
            out[tuple(idx)] = True
    return out


def domination_constant(mu, grid, radii=None, where=None):
    """Smallest c with M_1(mu) <= c I_1(mu) on ``where`` minus atom cells."""
    m1 = frac_maximal_1(mu, grid, radii)
    i1 = riesz_potential_1(mu, grid)
    sel = np.ones(grid.shape, dtype=bool) if where is None else where.copy()
    sel &= ~atom_cells(mu, grid)
    sel &= i1 > 0
    if not sel.any():
        return 0.0
    return float((m1[sel] / i1[sel]).max())
