"""Discrete balls on uniform grids.

A ball B_r(x) on the lattice is the set of cells whose centre c satisfies
|c - x| < r.  All modules use this membership rule so that ball sums,
averages and counts agree with each other.
"""

from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve


@lru_cache(maxsize=256)
def _offsets_cached(reach, n):
    m = int(np.ceil(reach)) + 1
    axes = [np.arange(-m, m + 1)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    d = np.sqrt((pts.astype(float) ** 2).sum(axis=1))
    keep = d < reach
    return pts[keep], d[keep]


def ball_offsets(r, h, n):
    """Integer offsets o with |o| h < r, and their lengths in units of h."""
    # round the reach so that cached keys are stable across float noise
    reach = round(float(r) / float(h), 12)
    pts, d = _offsets_cached(reach, int(n))
    return pts.copy(), d.copy()


def disk_kernel(r, h, n):
    """Indicator array of the centred lattice ball of radius r (odd side)."""
    reach = round(float(r) / float(h), 12)
    m = int(np.ceil(reach))
    axes = [np.arange(-m, m + 1)] * n
    grids = np.meshgrid(*axes, indexing="ij")
    d2 = sum(g.astype(float) ** 2 for g in grids)
    return (np.sqrt(d2) < reach).astype(float)


def ball_sum(field, r, h):
    """Sum of ``field`` over the lattice ball of radius r around every cell.

    Values outside the array count as zero.  The kernel is symmetric so the
    convolution equals the correlation we want.
    """
    field = np.asarray(field, dtype=float)
    kern = disk_kernel(r, h, field.ndim)
    if kern.size == 1:
        return field.copy()
    if kern.size <= 49:
        # tiny stencils: exact shifted sums, no FFT round-off
        return _direct_ball_sum(field, kern)
    return fftconvolve(field, kern, mode="same")


def _direct_ball_sum(field, kern):
    out = np.zeros_like(field)
    m = kern.shape[0] // 2
    padded = np.pad(field, m)
    for idx in np.argwhere(kern > 0):
        sl = tuple(slice(int(i), int(i) + s) for i, s in zip(idx, field.shape))
        out += padded[sl]
    return out


def ball_count(shape, r, h, support=None):
    """Number of cells of ``support`` (default: the whole array) in each ball."""
    if support is None:
        support = np.ones(shape, dtype=float)
    return np.rint(ball_sum(np.asarray(support, dtype=float), r, h))


def lattice_ball_size(r, h, n):
    """Number of lattice points in a ball of radius r centred on a lattice point."""
    return len(ball_offsets(r, h, n)[0])


def dyadic_radii(h, rmax, start=None):
    """Radii h * 2^k (or start * 2^k) up to the first one reaching ``rmax``."""
    r = float(h if start is None else start)
    out = [r]
    while out[-1] < rmax:
        out.append(out[-1] * 2.0)
    return np.array(out)
