"""Friends-of-friends clustering and halo catalogs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .grid import build_grid
from .particles import ParticleSet

DEFAULT_MIN_SIZE = 20


@dataclass(frozen=True, eq=False)
class FofLabels:
    """Component label per particle: the smallest particle index in its component."""

    labels: np.ndarray

    @property
    def n_components(self) -> int:
        return int(np.count_nonzero(self.labels == np.arange(len(self.labels))))

    def sizes(self) -> np.ndarray:
        """Size of every component, in order of its label."""
        roots = self.labels == np.arange(len(self.labels))
        return np.bincount(self.labels, minlength=len(self.labels))[roots]

    def __eq__(self, other):
        return isinstance(other, FofLabels) and np.array_equal(self.labels, other.labels)

    def save(self, path) -> None:
        Path(path).write_bytes(self.labels.astype("<i8").tobytes())

    @classmethod
    def load(cls, path) -> "FofLabels":
        return cls(np.frombuffer(Path(path).read_bytes(), dtype="<i8").astype(np.int64))


@dataclass(frozen=True)
class HaloCatalog:
    sizes: np.ndarray
    min_size: int

    def __len__(self) -> int:
        return len(self.sizes)


def fof_components(p: ParticleSet, b: float) -> FofLabels:
    """Link every pair with ``d <= b`` and return canonical component labels."""
    if b <= 0:
        raise ValueError("linking length must be positive")
    if p.n == 0:
        return FofLabels(np.zeros(0, dtype=np.int64))
    grid = build_grid(p, b)
    labels = kernels.fof_labels(
        p.positions(), grid.cell_of, grid.cell_start, grid.sorted_ids, grid.dims, b * b
    )
    return FofLabels(np.asarray(labels, dtype=np.int64))


def halo_catalog(labels: FofLabels, min_size: int = DEFAULT_MIN_SIZE) -> HaloCatalog:
    sizes = labels.sizes()
    sizes = np.sort(sizes[sizes >= min_size])[::-1]
    return HaloCatalog(sizes.astype(np.int64), int(min_size))
