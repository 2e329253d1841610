"""Uniform cell grid and vulnerable-pair detection.

A pair is vulnerable when its original distance lies in the half-open band
``(b - 2*sqrt(3)*xi, b + 2*sqrt(3)*xi]``: with every coordinate allowed to move
by ``xi``, only those pairs can change link state. All comparisons are done on
squared float64 distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels
from .particles import ParticleSet

SQRT3 = math.sqrt(3.0)
BRUTE_FORCE_LIMIT = 10_000


@dataclass(frozen=True, eq=False)
class GridIndex:
    dims: tuple[int, int, int]
    cell_width: np.ndarray
    lo: np.ndarray
    scale: np.ndarray
    cell_of: np.ndarray
    cell_start: np.ndarray
    sorted_ids: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def mean_occupancy(self) -> float:
        nonempty = int(np.count_nonzero(np.diff(self.cell_start)))
        return len(self.sorted_ids) / nonempty if nonempty else 0.0

    def cell_index(self, pos: np.ndarray) -> np.ndarray:
        """Linear cell id for arbitrary ``(n, 3)`` positions (same rule as the build)."""
        idx = ((pos - self.lo) * self.scale).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        nx, ny, nz = self.dims
        return (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]


def grid_dims(extent, n: int, min_width: float) -> tuple[int, int, int]:
    """Largest grid with cell width >= ``min_width`` and at most ``n`` cells.

    When the cell cap binds, all axes are shrunk by a common factor and then
    the largest axis is decremented until the cap holds.
    """
    if min_width <= 0:
        raise ValueError("min_width must be positive")
    extent = np.asarray(extent, dtype=np.float64)
    # keep cells a hair wider than requested so rounding in the cell index
    # can never put two particles within min_width two cells apart
    need = min_width * (1.0 + 1e-12)
    dims = np.maximum(1, np.floor(extent / need)).astype(np.int64)
    for k in range(3):
        while dims[k] > 1 and extent[k] / dims[k] < need:
            dims[k] -= 1
    cap = max(n, 1)
    if np.prod(dims) > cap:
        f = (cap / float(np.prod(dims))) ** (1.0 / 3.0)
        dims = np.maximum(1, np.floor(dims * f)).astype(np.int64)
        while np.prod(dims) > cap:
            dims[np.argmax(dims)] -= 1
    return tuple(int(d) for d in dims)


def build_grid(p: ParticleSet, min_width: float) -> GridIndex:
    if min_width <= 0:
        raise ValueError("min_width must be positive")
    extent = p.bbox.extent
    dims = grid_dims(extent, p.n, min_width)
    lo = np.asarray(p.bbox.lo, dtype=np.float64)
    dims_f = np.asarray(dims, dtype=np.float64)
    with np.errstate(divide="ignore"):
        scale = np.where(extent > 0, dims_f / np.where(extent > 0, extent, 1.0), 0.0)
        width = np.where(extent > 0, extent / dims_f, np.inf)
    cell_of, cell_start, sorted_ids = kernels.cell_sort(p.positions(), lo, scale, dims)
    return GridIndex(dims, width, lo, scale, cell_of, cell_start, sorted_ids)


@dataclass(frozen=True, eq=False)
class VulnerablePairSet:
    """Vulnerable pairs ``(i[k], j[k])`` with ``i < j`` and their original link bit."""

    i: np.ndarray
    j: np.ndarray
    orig_linked: np.ndarray
    b: float
    xi: float

    def __len__(self) -> int:
        return len(self.i)

    @property
    def editable(self) -> np.ndarray:
        """Sorted particle indices appearing in at least one pair."""
        return np.union1d(self.i, self.j)

    def pair_keys(self, n: int) -> np.ndarray:
        return self.i * np.int64(n) + self.j

    def as_sorted(self) -> "VulnerablePairSet":
        order = np.lexsort((self.j, self.i))
        return VulnerablePairSet(self.i[order], self.j[order], self.orig_linked[order], self.b, self.xi)

    def take(self, mask_or_idx) -> "VulnerablePairSet":
        return VulnerablePairSet(
            self.i[mask_or_idx], self.j[mask_or_idx], self.orig_linked[mask_or_idx], self.b, self.xi
        )


def band_limits(b: float, xi: float) -> tuple[float, float]:
    """Squared lower (exclusive) and upper (inclusive) band distances."""
    reach = 2.0 * SQRT3 * xi
    lower = b - reach
    lo2 = lower * lower if lower > 0 else -1.0
    upper = b + reach
    return lo2, upper * upper


def search_width(b: float, xi: float) -> float:
    return b + 2.0 * SQRT3 * xi


def _empty_pairs(b, xi) -> VulnerablePairSet:
    z = np.zeros(0, dtype=np.int64)
    return VulnerablePairSet(z, z.copy(), np.zeros(0, dtype=bool), b, xi)


def find_vulnerable_pairs(p_orig: ParticleSet, b: float, xi: float) -> VulnerablePairSet:
    """Cell-list enumeration of vulnerable pairs.

    Pairs come out cell-major: by the grid-sorted position of the first
    particle, then neighbour offset, then the partner's sorted position.
    """
    if b <= 0:
        raise ValueError("linking length must be positive")
    if xi < 0:
        raise ValueError("error bound must be non-negative")
    if p_orig.n < 2 or xi == 0:
        return _empty_pairs(b, xi)
    grid = build_grid(p_orig, search_width(b, xi))
    lo2, hi2 = band_limits(b, xi)
    i, j, linked = kernels.band_pairs(
        p_orig.positions(), grid.cell_of, grid.cell_start, grid.sorted_ids,
        grid.dims, lo2, hi2, b * b,
    )
    return VulnerablePairSet(i, j, linked.astype(bool), b, xi)


def brute_force_pairs(p_orig: ParticleSet, b: float, xi: float, limit: int | None = BRUTE_FORCE_LIMIT) -> VulnerablePairSet:
    """O(N^2) reference enumeration; pairs sorted by ``(i, j)``."""
    if limit is not None and p_orig.n > limit:
        raise ValueError(f"brute force refused for n={p_orig.n} > {limit}")
    if p_orig.n < 2 or xi == 0:
        return _empty_pairs(b, xi)
    d2 = pdist(p_orig.positions(), "sqeuclidean")
    lo2, hi2 = band_limits(b, xi)
    iu, ju = np.triu_indices(p_orig.n, k=1)
    keep = (d2 > lo2) & (d2 <= hi2)
    return VulnerablePairSet(
        iu[keep].astype(np.int64), ju[keep].astype(np.int64), d2[keep] <= b * b, b, xi
    )
