"""Particle containers, raw coordinate IO and synthetic datasets.

Coordinates are held as three float64 arrays regardless of the on-disk width.
On disk a dataset is three raw little-endian files sharing a prefix::

    <prefix>.x.f32  <prefix>.y.f32  <prefix>.z.f32  <prefix>.meta

The extension gives the element type (``f32`` or ``f64``); ``.meta`` is an
optional ``key = value`` sidecar holding ``n``, ``dtype`` and the bounding box.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AXES = ("x", "y", "z")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ParticleDataError(ValueError):
    """Malformed or inconsistent particle data."""


@dataclass(frozen=True)
class DomainBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("DomainBox needs 3-vectors")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"inverted box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @classmethod
    def unit(cls) -> "DomainBox":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    @classmethod
    def around(cls, pos: np.ndarray) -> "DomainBox":
        """Tight box around an ``(n, 3)`` array; degenerate at the origin if empty."""
        if len(pos) == 0:
            return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        return cls(tuple(pos.min(axis=0)), tuple(pos.max(axis=0)))

    def contains(self, pos: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pos >= lo) & (pos <= hi), axis=-1)

    def padded(self, delta: float) -> "DomainBox":
        return DomainBox(tuple(np.asarray(self.lo) - delta), tuple(np.asarray(self.hi) + delta))

    def intersect(self, other: "DomainBox") -> "DomainBox":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return DomainBox(tuple(lo), tuple(np.maximum(lo, hi)))


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Structure-of-arrays 3D particle coordinates inside a domain box."""

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    bbox: DomainBox = field(default=None)

    def __post_init__(self):
        arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (self.xs, self.ys, self.zs)]
        if any(a.ndim != 1 for a in arrs):
            raise ParticleDataError("coordinate arrays must be 1-D")
        if not (len(arrs[0]) == len(arrs[1]) == len(arrs[2])):
            raise ParticleDataError(
                f"coordinate length mismatch: {[len(a) for a in arrs]}"
            )
        for name, a in zip(AXES, arrs):
            if not np.all(np.isfinite(a)):
                raise ParticleDataError(f"non-finite value in {name} coordinates")
            a.flags.writeable = False
            object.__setattr__(self, name + "s", a)
        bbox = self.bbox
        if bbox is None:
            bbox = DomainBox.around(self.positions())
        elif self.n and not np.all(bbox.contains(self.positions())):
            raise ParticleDataError("particles outside the declared bounding box")
        object.__setattr__(self, "bbox", bbox)

    @classmethod
    def from_positions(cls, pos, bbox: DomainBox | None = None) -> "ParticleSet":
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
        return cls(pos[:, 0], pos[:, 1], pos[:, 2], bbox)

    @property
    def n(self) -> int:
        return len(self.xs)

    def __len__(self) -> int:
        return self.n

    def positions(self) -> np.ndarray:
        """Fresh ``(n, 3)`` C-contiguous copy of the coordinates."""
        return np.column_stack((self.xs, self.ys, self.zs)) if self.n else np.zeros((0, 3))

    def interleaved(self) -> np.ndarray:
        """Coordinates flattened as ``x0, y0, z0, x1, ...`` (length ``3n``)."""
        return self.positions().reshape(-1)

    def value_range(self) -> float:
        """Global coordinate range taken over all three axes together."""
        if self.n == 0:
            return 0.0
        pos = self.positions()
        return float(pos.max() - pos.min())

    def subset(self, ids, bbox: DomainBox | None = None) -> "ParticleSet":
        ids = np.asarray(ids, dtype=np.int64)
        return ParticleSet(self.xs[ids], self.ys[ids], self.zs[ids], bbox)

    def with_positions(self, pos) -> "ParticleSet":
        """Same-size set with new coordinates; the box grows to fit if needed."""
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
        if len(pos) != self.n:
            raise ParticleDataError("particle count changed")
        bbox = self.bbox
        if self.n and not np.all(bbox.contains(pos)):
            tight = DomainBox.around(pos)
            bbox = DomainBox(tuple(np.minimum(bbox.lo, tight.lo)), tuple(np.maximum(bbox.hi, tight.hi)))
        return ParticleSet(pos[:, 0], pos[:, 1], pos[:, 2], bbox)

    def same_coordinates(self, other: "ParticleSet") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.coords(), other.coords()))

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.xs, self.ys, self.zs


def absolute_bound(p: ParticleSet, xi_rel: float) -> float:
    """Relative error bound to absolute, using the global value range."""
    return float(xi_rel) * p.value_range()


def linking_length(eta: float, vol: float, n: int, d: int = 3) -> float:
    """FoF linking length ``eta * (vol / n) ** (1 / d)``."""
    if n <= 0:
        raise ValueError("linking length needs n > 0")
    if vol <= 0:
        raise ValueError("linking length needs a positive volume")
    if d not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    return eta * (vol / n) ** (1.0 / d)


# ---------------------------------------------------------------------------
# raw IO


def _read_raw(path, dtype) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParticleDataError(f"cannot read {path}: {exc}") from exc
    if len(raw) % dtype.itemsize:
        raise ParticleDataError(f"{path}: {len(raw)} bytes is not a whole number of {dtype}")
    return np.frombuffer(raw, dtype=dtype).astype(np.float64)


def load_raw(paths, dtype="f32", bbox: DomainBox | None = None) -> ParticleSet:
    dt = _DTYPES[dtype]
    arrs = [_read_raw(p, dt) for p in paths]
    lens = [len(a) for a in arrs]
    if len(set(lens)) != 1:
        raise ParticleDataError(f"per-axis file lengths differ: {lens}")
    for path, a in zip(paths, arrs):
        if not np.all(np.isfinite(a)):
            raise ParticleDataError(f"{path}: NaN or Inf encountered")
    return ParticleSet(*arrs, bbox=bbox)


def load_raw_f32(path_x, path_y, path_z, bbox: DomainBox | None = None) -> ParticleSet:
    """Load three raw little-endian float32 coordinate files, widened to float64."""
    return load_raw((path_x, path_y, path_z), "f32", bbox)


def narrowest_dtype(p: ParticleSet) -> str:
    """``f32`` when every coordinate survives a float32 round trip, else ``f64``."""
    for a in p.coords():
        if not np.array_equal(a.astype(np.float32).astype(np.float64), a):
            return "f64"
    return "f32"


def axis_paths(prefix, dtype: str) -> list[Path]:
    return [Path(f"{prefix}.{ax}.{dtype}") for ax in AXES]


def write_raw(prefix, p: ParticleSet, dtype: str = "f32", meta: dict | None = None) -> list[Path]:
    """Write ``<prefix>.{x,y,z}.<dtype>`` plus the ``.meta`` sidecar.

    ``dtype="auto"`` picks the narrowest lossless width. Narrowing to float32
    is refused if it would change any value.
    """
    if dtype == "auto":
        dtype = narrowest_dtype(p)
    if dtype == "f32" and narrowest_dtype(p) != "f32":
        raise ParticleDataError("coordinates are not exactly representable as float32")
    dt = _DTYPES[dtype]
    paths = axis_paths(prefix, dtype)
    Path(paths[0]).parent.mkdir(parents=True, exist_ok=True)
    for other in ("f32", "f64"):
        if other != dtype:
            for stale in axis_paths(prefix, other):
                if stale.exists():
                    stale.unlink()
    for path, a in zip(paths, p.coords()):
        path.write_bytes(a.astype(dt).tobytes())
    info = {"n": p.n, "dtype": dtype, "bbox_lo": p.bbox.lo, "bbox_hi": p.bbox.hi}
    info.update(meta or {})
    write_meta(f"{prefix}.meta", info)
    return paths


def _fmt(v) -> str:
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_meta(path, info: dict) -> None:
    lines = [f"{k} = {_fmt(v)}" for k, v in info.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParticleDataError(f"{path}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def read_dataset(prefix) -> ParticleSet:
    """Load a dataset written by :func:`write_raw` (or bare raw files)."""
    found = [d for d in ("f32", "f64") if all(p.exists() for p in axis_paths(prefix, d))]
    if not found:
        raise ParticleDataError(f"no coordinate files for prefix {prefix}")
    dtype = found[0]
    bbox = None
    meta_path = Path(f"{prefix}.meta")
    if meta_path.exists():
        meta = read_meta(meta_path)
        dtype = meta.get("dtype", dtype)
        if "bbox_lo" in meta and "bbox_hi" in meta:
            bbox = DomainBox(
                tuple(float(v) for v in meta["bbox_lo"].split()),
                tuple(float(v) for v in meta["bbox_hi"].split()),
            )
    p = load_raw(axis_paths(prefix, dtype), dtype)
    if bbox is not None and p.n and np.all(bbox.contains(p.positions())):
        p = ParticleSet(*p.coords(), bbox=bbox)
    return p


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "uniform"
    n: int = 1000
    blobs: int = 8
    sigma: float = 0.02
    background_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "clustered"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if not 0.0 <= self.background_fraction <= 1.0:
            raise ValueError("background_fraction must lie in [0, 1]")
        if self.kind == "clustered":
            if self.sigma <= 0:
                raise ValueError("sigma must be > 0")
            if self.blobs < 1 and self.background_fraction < 1.0:
                raise ValueError("clustered data needs at least one blob")


def gen_synthetic(spec: SynthSpec) -> ParticleSet:
    """Deterministic synthetic particles in ``[0, 1)^3``.

    Uses numpy's counter-based Philox generator keyed by ``spec.seed``. Blob
    members falling outside the cube are resampled rather than clipped so no
    particles pile up on the faces.
    """
    rng = np.random.Generator(np.random.Philox(key=spec.seed & (2**64 - 1)))
    n = spec.n
    if spec.kind == "uniform":
        pos = rng.random((n, 3))
    else:
        n_bg = int(round(n * spec.background_fraction))
        n_cl = n - n_bg
        centers = 0.15 + 0.7 * rng.random((spec.blobs, 3))
        member = np.sort(rng.integers(0, spec.blobs, size=n_cl))
        pts = centers[member] + spec.sigma * rng.standard_normal((n_cl, 3))
        while True:
            bad = np.flatnonzero(np.any((pts < 0.0) | (pts >= 1.0), axis=1))
            if len(bad) == 0:
                break
            pts[bad] = centers[member[bad]] + spec.sigma * rng.standard_normal((len(bad), 3))
        pos = np.concatenate([pts, rng.random((n_bg, 3))])
        pos = pos[rng.permutation(n)]
    # float32-representable so persisted datasets reload bit-identically
    pos = pos.astype(np.float32).astype(np.float64)
    pos[pos >= 1.0] = np.nextafter(np.float32(1.0), np.float32(0.0))
    return ParticleSet.from_positions(pos, DomainBox.unit())


def scaled(p: ParticleSet, factor: float) -> ParticleSet:
    """Uniformly rescale coordinates and box (e.g. unit cube to a simulation box)."""
    lo = np.asarray(p.bbox.lo) * factor
    hi = np.asarray(p.bbox.hi) * factor
    return ParticleSet(p.xs * factor, p.ys * factor, p.zs * factor, DomainBox(tuple(lo), tuple(hi)))


def mean_separation(vol: float, n: int, d: int = 3) -> float:
    return (vol / n) ** (1.0 / d) if n else math.inf


def env_threads(default: int = 1) -> int:
    val = os.environ.get("CLUSTER_GUARD_THREADS", "")
    try:
        return max(1, int(val))
    except ValueError:
        return default
