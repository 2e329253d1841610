"""Cluster-fidelity and rate-distortion metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fof import HaloCatalog
from .grid import VulnerablePairSet
from .particles import ParticleSet

BYTES_PER_PARTICLE = 12  # three float32 coordinates


@dataclass(frozen=True)
class MccCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def value(self) -> float:
        """Matthews coefficient; degenerate denominators give 1 if nothing is wrong, else 0."""
        tp, tn, fp, fn = (float(v) for v in (self.tp, self.tn, self.fp, self.fn))
        den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        if den == 0:
            return 1.0 if self.fp == 0 and self.fn == 0 else 0.0
        return (tp * tn - fp * fn) / math.sqrt(den)


def link_states(pos: np.ndarray, v: VulnerablePairSet, b: float) -> np.ndarray:
    d = pos[v.i] - pos[v.j]
    return np.einsum("ij,ij->i", d, d) <= b * b


def mcc_counts(v: VulnerablePairSet, p_orig: ParticleSet, p_recon: ParticleSet, b: float) -> MccCounts:
    """Confusion counts of link existence over the vulnerable pairs.

    Positive means linked. The original states are recomputed from
    ``p_orig`` rather than trusted from ``v``.
    """
    if p_orig.n != p_recon.n:
        raise ValueError("particle counts differ")
    truth = link_states(p_orig.positions(), v, b)
    pred = link_states(p_recon.positions(), v, b)
    return MccCounts(
        tp=int(np.count_nonzero(truth & pred)),
        tn=int(np.count_nonzero(~truth & ~pred)),
        fp=int(np.count_nonzero(~truth & pred)),
        fn=int(np.count_nonzero(truth & ~pred)),
    )


def mcc(v: VulnerablePairSet, p_orig: ParticleSet, p_recon: ParticleSet, b: float) -> float:
    return mcc_counts(v, p_orig, p_recon, b).value()


@dataclass(frozen=True, eq=False)
class HmfResult:
    bin_edges: np.ndarray  # log10 mass
    density: np.ndarray  # dn / dlog10 M
    counts: np.ndarray

    @property
    def b_bins(self) -> int:
        return len(self.density)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


def hmf(catalog: HaloCatalog, vol: float, b_bins: int = 50, particle_mass: float = 1.0) -> HmfResult:
    """Halo counts in ``b_bins`` equal log10-mass bins over ``[min M, max M]``.

    When every halo has the same mass the bins span half a dex either side.
    """
    if not vol > 0:
        raise ValueError("volume must be positive")
    if b_bins < 1:
        raise ValueError("need at least one bin")
    if len(catalog.sizes) == 0:
        z = np.zeros(0)
        return HmfResult(z, z.copy(), np.zeros(0, np.int64))
    logm = np.log10(particle_mass * catalog.sizes.astype(np.float64))
    lo, hi = float(logm.min()), float(logm.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, b_bins + 1)
    counts, _ = np.histogram(logm, bins=edges)
    return HmfResult(edges, counts / (vol * np.diff(edges)), counts.astype(np.int64))


def hmf_rel_error(ref: HmfResult, test: HmfResult) -> np.ndarray:
    """``|test - ref| / ref`` at each test bin centre, ``ref`` linearly interpolated.

    Centres outside the reference centres use the end segments' linear
    extrapolation. NaN marks bins where the interpolated reference is not
    positive.
    """
    if ref.b_bins == 0 or test.b_bins == 0:
        raise ValueError("empty mass function")
    if test.bin_edges[-1] < ref.bin_edges[0] or test.bin_edges[0] > ref.bin_edges[-1]:
        raise ValueError("mass ranges do not overlap")
    xr, yr = ref.centers, ref.density
    xt = test.centers
    if len(xr) == 1:
        base = np.full(len(xt), yr[0])
    else:
        base = np.interp(xt, xr, yr)
        left, right = xt < xr[0], xt > xr[-1]
        base[left] = yr[0] + (xt[left] - xr[0]) * (yr[1] - yr[0]) / (xr[1] - xr[0])
        base[right] = yr[-1] + (xt[right] - xr[-1]) * (yr[-1] - yr[-2]) / (xr[-1] - xr[-2])
    out = np.full(len(xt), np.nan)
    ok = base > 0
    out[ok] = np.abs(test.density[ok] - base[ok]) / base[ok]
    return out


@dataclass(frozen=True)
class RateDistortion:
    psnr_db: float
    bpp: float
    ratio: float
    mse: float
    max_error: float


def psnr(p_orig: ParticleSet, p_recon: ParticleSet) -> tuple[float, float]:
    """``(psnr_db, mse)`` over all coordinates with the global value range."""
    if p_orig.n != p_recon.n:
        raise ValueError("particle counts differ")
    if p_orig.n == 0:
        raise ValueError("no particles")
    err = p_recon.positions() - p_orig.positions()
    mse = float(np.mean(err * err))
    if mse == 0:
        return math.inf, 0.0
    rng = p_orig.value_range()
    if rng == 0:
        return -math.inf, mse
    return 20.0 * math.log10(rng / math.sqrt(mse)), mse


def rate_distortion(p_orig: ParticleSet, p_recon: ParticleSet, base_bytes: int, edit_bytes: int) -> RateDistortion:
    db, mse = psnr(p_orig, p_recon)
    total = base_bytes + edit_bytes
    n = p_orig.n
    max_err = float(np.max(np.abs(p_recon.positions() - p_orig.positions())))
    return RateDistortion(
        psnr_db=db,
        bpp=8.0 * total / n,
        ratio=BYTES_PER_PARTICLE * n / total if total else math.inf,
        mse=mse,
        max_error=max_err,
    )


def imbalance(values) -> float:
    """``(max - mean) / mean``; 0 for an empty or all-zero sequence."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return 0.0
    mean = float(a.mean())
    if mean == 0:
        return 0.0
    return (float(a.max()) - mean) / mean
