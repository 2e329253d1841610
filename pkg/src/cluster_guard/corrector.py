"""Projected gradient descent that restores FoF link states within the error bound.

Only vulnerable pairs enter the loss and only editable particles move. The
optimiser works on a compact ``(|E|, 3)`` array addressed through a
particle-to-slot map built once per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal

import numpy as np

from . import kernels
from .grid import SQRT3, VulnerablePairSet
from .particles import ParticleSet


class BoundViolationError(ValueError):
    """Base-compressed input is farther than ``xi`` from the original."""


@dataclass(frozen=True)
class CorrectionParams:
    xi: float
    b: float
    m: int = 16
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t_max: int = 100_000
    eps_loss: float = 1e-10
    optimizer: str = "adam"
    vanilla_step: float | None = None

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.m < 2 or self.m > 52:
            raise ValueError("bit depth m must be in [2, 52]")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if not self.eps_loss > 0:
            raise ValueError("eps_loss must be positive")
        if self.optimizer not in ("adam", "vanilla_pgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.vanilla_step is not None and not self.vanilla_step > 0:
            raise ValueError("vanilla_step must be positive")

    @property
    def eps_q(self) -> float:
        """Safety margin ``2 xi / (2^m - 1)``; exceeds the codec's worst rounding error."""
        return 2.0 * self.xi / (2.0**self.m - 1.0)

    @property
    def xi_prime(self) -> float:
        return self.xi * (1.0 - 2.0**-self.m)

    @property
    def margin(self) -> float:
        """Distance margin ``2 sqrt(3) eps_q`` used by the tightened loss."""
        return 2.0 * SQRT3 * self.eps_q


@dataclass
class OptimState:
    positions: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, positions: np.ndarray) -> "OptimState":
        return cls(positions, np.zeros_like(positions), np.zeros_like(positions), 0)


@dataclass(eq=False)
class CorrectionResult:
    corrected: ParticleSet
    delta: np.ndarray
    iterations: int
    final_loss: float
    converged: bool
    initial_loss: float = 0.0
    n_tight_initial: int = 0
    n_singular: int = 0
    loss_trace: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# loss and gradient


def _pair_args(v: VulnerablePairSet):
    return v.i, v.j, v.orig_linked.astype(np.uint8)


def _positions(p) -> np.ndarray:
    if isinstance(p, ParticleSet):
        return p.positions()
    return np.ascontiguousarray(p, dtype=np.float64).reshape(-1, 3)


def loss(p_orig, p_hat, v: VulnerablePairSet, b: float) -> float:
    """Squared overflow of broken links plus squared underflow of false links."""
    return tight_loss(p_orig, p_hat, v, b, 0.0)


def tight_loss(p_orig, p_hat, v: VulnerablePairSet, b: float, eps_q: float) -> float:
    """Loss with both thresholds pushed ``2 sqrt(3) eps_q`` past ``b``.

    Zero means every pair sits on its original side of ``b`` with room to
    spare for the edit quantisation.
    """
    c = 2.0 * SQRT3 * eps_q
    val, _, _ = kernels.pair_terms(_positions(p_hat), *_pair_args(v), b, c, False)
    return val


def gradient(p_orig, p_hat, v: VulnerablePairSet, b: float, eps_q: float) -> np.ndarray:
    """Gradient of :func:`tight_loss` as an ``(n, 3)`` array, zero off the editable set."""
    c = 2.0 * SQRT3 * eps_q
    _, grad, _ = kernels.pair_terms(_positions(p_hat), *_pair_args(v), b, c, True)
    return grad


def active_pairs(pos: np.ndarray, v: VulnerablePairSet, b: float, c: float) -> np.ndarray:
    """Mask of pairs with a nonzero tightened-loss term at ``pos`` (``(n, 3)``)."""
    d = pos[v.i] - pos[v.j]
    dh = np.sqrt(np.einsum("ij,ij->i", d, d))
    return np.where(v.orig_linked, dh > b - c, dh <= b + c)


def violated_pairs(pos: np.ndarray, v: VulnerablePairSet, b: float) -> np.ndarray:
    """Mask of pairs whose link state at ``pos`` differs from the original."""
    d = pos[v.i] - pos[v.j]
    return (np.einsum("ij,ij->i", d, d) <= b * b) != v.orig_linked


# ---------------------------------------------------------------------------
# optimisation primitives


def project_box(p_hat, p_orig, bound: float):
    """Clamp every coordinate of ``p_hat`` to ``[orig - bound, orig + bound]``."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    if isinstance(p_hat, ParticleSet):
        pos = np.clip(p_hat.positions(), p_orig.positions() - bound, p_orig.positions() + bound)
        return p_hat.with_positions(pos)
    p_orig = np.asarray(p_orig)
    return np.clip(p_hat, p_orig - bound, p_orig + bound)


def adam_step(state: OptimState, g: np.ndarray, params: CorrectionParams) -> OptimState:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = params.beta1, params.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**state.t)
    v_hat = v / (1.0 - b2**state.t)
    state.positions -= params.alpha * m_hat / (np.sqrt(v_hat) + params.eps_adam)
    return state


def lipschitz_estimate(v: VulnerablePairSet, params: CorrectionParams) -> float:
    """Upper estimate of the tightened-loss gradient's Lipschitz constant.

    Each pair term has a Hessian of norm at most ``2 * kappa`` with
    ``kappa = max(1, (b + c - d_lo) / d_lo)``, ``d_lo`` being the smallest
    distance reachable inside the box; summing over a particle's pairs gives
    ``4 * kappa * max_degree``.
    """
    if len(v) == 0:
        return 0.0
    deg = np.bincount(np.concatenate([v.i, v.j])).max()
    b, c = params.b, params.margin
    d_lo = b - 4.0 * SQRT3 * params.xi
    if d_lo <= 0:
        d_lo = 1e-3 * b
    kappa = max(1.0, (b + c - d_lo) / d_lo)
    return 4.0 * kappa * float(deg)


def iteration_budget(xi: float, n_tight_pairs: int, eps_loss: float) -> int:
    """``ceil(12 xi^2 |V_tight| / eps_loss)``, evaluated in decimal on the given values."""
    if not eps_loss > 0:
        raise ValueError("eps_loss must be positive")
    val = Decimal(12) * Decimal(repr(float(xi))) ** 2 * Decimal(int(n_tight_pairs)) / Decimal(repr(float(eps_loss)))
    return int(val.to_integral_value(rounding=ROUND_CEILING))


class Stepper:
    """Optimiser update plus box projection for one compact coordinate block."""

    def __init__(self, positions, lo, hi, params: CorrectionParams, step: float | None = None):
        self.state = OptimState.fresh(positions)
        self.lo = lo
        self.hi = hi
        self.params = params
        self.step = step

    @property
    def positions(self) -> np.ndarray:
        return self.state.positions

    def __call__(self, g: np.ndarray) -> None:
        if self.params.optimizer == "adam":
            adam_step(self.state, g, self.params)
        else:
            self.state.t += 1
            self.state.positions -= self.step * g
        np.clip(self.state.positions, self.lo, self.hi, out=self.state.positions)


def slot_order(v: VulnerablePairSet) -> np.ndarray:
    """Editable particles in order of first appearance along the pair list.

    Pairs come out spatially grouped, so this layout keeps the kernel's
    scattered reads and writes close together in memory. The gradient of a
    particle is summed in pair order whatever its slot, so the layout does
    not change any result.
    """
    if len(v) == 0:
        return np.zeros(0, dtype=np.int64)
    seq = np.empty(2 * len(v), dtype=np.int64)
    seq[0::2] = v.i
    seq[1::2] = v.j
    ids, first = np.unique(seq, return_index=True)
    return ids[np.argsort(first)]


def check_bound(orig: np.ndarray, hat: np.ndarray, xi: float) -> None:
    if orig.shape != hat.shape:
        raise BoundViolationError("particle counts differ")
    if len(orig) == 0:
        return
    worst = float(np.max(np.abs(hat - orig)))
    if worst > xi:
        raise BoundViolationError(f"input deviates by {worst!r} > xi = {xi!r}")


def correct(p_orig: ParticleSet, p_hat0: ParticleSet, v: VulnerablePairSet,
            params: CorrectionParams, trace: bool = False) -> CorrectionResult:
    """Run PGD on the tightened loss until it drops to ``eps_loss`` or ``t_max`` steps.

    The loss is checked before every step, so inputs that already satisfy
    the tolerance take zero iterations and produce an all-zero ``delta``.
    """
    orig = p_orig.positions()
    hat0 = p_hat0.positions()
    check_bound(orig, hat0, params.xi)
    n = p_orig.n
    editable = slot_order(v)
    slot = np.full(n, -1, dtype=np.int64)
    slot[editable] = np.arange(len(editable))
    pi, pj = slot[v.i], slot[v.j]
    linked = v.orig_linked.astype(np.uint8)
    b, c = params.b, params.margin

    step = None
    if params.optimizer == "vanilla_pgd":
        step = params.vanilla_step or 1.0 / max(lipschitz_estimate(v, params), 1e-300)
    xp = params.xi_prime
    stepper = Stepper(hat0[editable].copy(), orig[editable] - xp, orig[editable] + xp, params, step)
    pos = stepper.positions

    n_tight = int(active_pairs(hat0, v, b, c).sum()) if len(v) else 0
    losses: list[float] = []
    n_sing = 0
    converged = False
    cur = 0.0
    for _ in range(params.t_max):
        cur, g, ns = kernels.pair_terms(pos, pi, pj, linked, b, c, True)
        losses.append(cur)
        n_sing += ns
        if cur <= params.eps_loss:
            converged = True
            break
        stepper(g)
    if not converged:
        cur, _, _ = kernels.pair_terms(pos, pi, pj, linked, b, c, False)
        losses.append(cur)
        converged = cur <= params.eps_loss

    final = hat0.copy()
    final[editable] = pos
    delta = np.zeros_like(hat0)
    delta[editable] = pos - hat0[editable]
    return CorrectionResult(
        corrected=p_hat0.with_positions(final),
        delta=delta.reshape(-1),
        iterations=stepper.state.t,
        final_loss=cur,
        converged=converged,
        initial_loss=losses[0] if losses else 0.0,
        n_tight_initial=n_tight,
        n_singular=n_sing,
        loss_trace=losses if trace else [],
    )
