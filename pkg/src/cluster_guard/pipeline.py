"""Single-process correction pipeline: detect, correct, quantise, encode."""

from __future__ import annotations

from dataclasses import dataclass

from . import codec
from .corrector import CorrectionParams, CorrectionResult, correct, iteration_budget
from .grid import VulnerablePairSet, find_vulnerable_pairs
from .particles import ParticleSet


@dataclass(eq=False)
class PipelineOutput:
    log: codec.EditLog
    stream: bytes
    result: CorrectionResult
    pairs: VulnerablePairSet
    reconstructed: ParticleSet
    budget: int


def finish(p_orig: ParticleSet, p_hat0: ParticleSet, result: CorrectionResult,
           pairs: VulnerablePairSet, params: CorrectionParams, codec_id: int | None = None) -> PipelineOutput:
    """Quantise and encode a correction, and decode it again for the reconstruction."""
    log = codec.build_edit_log(p_orig, p_hat0, result.delta, params.xi, params.b, params.m)
    stream = codec.encode(log, codec_id)
    recon = codec.apply_edits(p_hat0, codec.decode(stream))
    budget = iteration_budget(params.xi, result.n_tight_initial, params.eps_loss)
    return PipelineOutput(log, stream, result, pairs, recon, budget)


def correct_and_encode(p_orig: ParticleSet, p_hat0: ParticleSet, params: CorrectionParams,
                       codec_id: int | None = None, trace: bool = False) -> PipelineOutput:
    pairs = find_vulnerable_pairs(p_orig, params.b, params.xi)
    result = correct(p_orig, p_hat0, pairs, params, trace=trace)
    return finish(p_orig, p_hat0, result, pairs, params, codec_id)
