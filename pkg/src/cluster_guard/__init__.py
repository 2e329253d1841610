"""Preserve friends-of-friends clusters through error-bounded lossy compression.

A base compressor moves every coordinate by at most ``xi``. Particle pairs
whose distance lies near the linking length can flip link state under such
a perturbation; this package finds those pairs, nudges the decompressed
coordinates (still within ``xi``) until every pair is back on its original
side, and stores the nudges as a small entropy-coded edit log.
"""

from .base import base_compress, load_external_pair
from .codec import EditLog, EditLogError, apply_edits, build_edit_log, compact, decode, dequantize, encode, quantize
from .corrector import BoundViolationError, CorrectionParams, CorrectionResult, correct, gradient, loss, tight_loss
from .distributed import decompose, distributed_correct, exchange_ghosts
from .fof import FofLabels, HaloCatalog, fof_components, halo_catalog
from .grid import VulnerablePairSet, build_grid, brute_force_pairs, find_vulnerable_pairs
from .kernels import BACKEND
from .metrics import hmf, hmf_rel_error, mcc, rate_distortion
from .particles import (
    DomainBox, ParticleDataError, ParticleSet, SynthSpec, absolute_bound, gen_synthetic,
    linking_length, load_raw_f32,
)
from .pipeline import correct_and_encode

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BoundViolationError", "CorrectionParams", "CorrectionResult", "DomainBox", "EditLog",
    "EditLogError", "FofLabels", "HaloCatalog", "ParticleDataError", "ParticleSet", "SynthSpec",
    "VulnerablePairSet", "absolute_bound", "apply_edits", "base_compress", "brute_force_pairs",
    "build_edit_log", "build_grid", "compact", "correct", "correct_and_encode", "decode", "decompose",
    "dequantize", "distributed_correct", "encode", "exchange_ghosts", "find_vulnerable_pairs",
    "fof_components", "gen_synthetic", "gradient", "halo_catalog", "hmf", "hmf_rel_error",
    "linking_length", "load_external_pair", "load_raw_f32", "loss", "mcc", "quantize",
    "rate_distortion", "tight_loss",
]
