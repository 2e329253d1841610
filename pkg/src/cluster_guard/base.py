"""Built-in error-bounded base compressor and the external-data adapter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .particles import ParticleDataError, ParticleSet, load_raw


@dataclass(frozen=True)
class BaseOutput:
    decompressed: ParticleSet
    payload_bytes: int
    n_outliers: int


def order0_entropy_bits(symbols: np.ndarray) -> float:
    """Total order-0 entropy of a symbol sequence, in bits."""
    if len(symbols) == 0:
        return 0.0
    _, counts = np.unique(symbols, return_counts=True)
    p = counts / len(symbols)
    return float(-(counts * np.log2(p)).sum())


def base_compress(p: ParticleSet, xi: float) -> BaseOutput:
    """Uniform scalar quantiser with bin width ``2 xi`` (round half to even).

    Any coordinate whose rounded reconstruction misses the bound by floating
    point error is stored verbatim as an outlier, so the output always
    satisfies ``|x_hat - x| <= xi``. The payload size is an estimate: order-0
    entropy of the integer codes plus 4 bytes per outlier.
    """
    if not xi > 0:
        raise ValueError("xi must be positive")
    pos = p.positions()
    step = 2.0 * xi
    codes = np.rint(pos / step)
    recon = codes * step
    bad = np.abs(recon - pos) > xi
    recon[bad] = pos[bad]
    n_out = int(bad.sum())
    bits = order0_entropy_bits(codes[~bad].astype(np.int64))
    payload = int(np.ceil(bits / 8.0)) + 4 * n_out
    return BaseOutput(p.with_positions(recon), payload, n_out)


@dataclass(frozen=True)
class ExternalPair:
    original: ParticleSet
    decompressed: ParticleSet
    violations: int
    max_error: float


def count_violations(orig: ParticleSet, decomp: ParticleSet, xi: float) -> tuple[int, float]:
    if orig.n != decomp.n:
        raise ParticleDataError(f"particle counts differ: {orig.n} vs {decomp.n}")
    if orig.n == 0:
        return 0, 0.0
    err = np.abs(decomp.positions() - orig.positions())
    return int((err > xi).sum()), float(err.max())


def load_external_pair(orig_paths, decomp_paths, xi: float, dtype: str = "f32",
                       decomp_dtype: str | None = None) -> ExternalPair:
    """Load an original/decompressed pair produced outside this package.

    Per-coordinate bound violations are counted, not raised: some
    compressors interpret relative bounds differently.
    """
    orig = load_raw(orig_paths, dtype)
    decomp = load_raw(decomp_paths, decomp_dtype or dtype)
    return pair_from_sets(orig, decomp, xi)


def pair_from_sets(orig: ParticleSet, decomp: ParticleSet, xi: float) -> ExternalPair:
    nviol, worst = count_violations(orig, decomp, xi)
    return ExternalPair(orig, decomp, nviol, worst)
