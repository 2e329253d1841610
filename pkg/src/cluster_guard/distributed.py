"""In-process simulation of the multi-rank correction protocol.

The domain is cut into a regular grid of rank boxes. Each rank owns the
particles inside its box (upper faces half-open, except on the domain
boundary) and receives ghost copies of every other particle within
``delta = b + 2 sqrt(3) xi`` of its box. A vulnerable pair belongs to the rank
owning its smaller-index endpoint.

Every iteration each rank evaluates loss and gradient over all of its local
pairs, the owned-pair losses are summed in rank order and compared with the
tolerance, every rank takes an optimiser step on its local editable
particles, and ghost coordinates are refreshed from their owners. Messages
are delivered sorted by sender rank, then global id, so a run is
reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corrector import (
    CorrectionParams, CorrectionResult, Stepper, active_pairs, check_bound, lipschitz_estimate, slot_order,
)
from .grid import VulnerablePairSet, find_vulnerable_pairs, search_width
from .metrics import imbalance as _imbalance
from .particles import DomainBox, ParticleSet
from .pipeline import PipelineOutput, finish


def rank_grid(r: int) -> tuple[int, int, int]:
    """Factor ``r`` into three axis counts as close to a cube as possible.

    Among factorizations ``a >= b >= c`` the one with the smallest ``a - c``
    wins, then the smallest ``a``; ``a`` goes to x, ``b`` to y, ``c`` to z.
    """
    if r < 1:
        raise ValueError("rank count must be >= 1")
    best = None
    for a in range(1, r + 1):
        if r % a:
            continue
        for b in range(1, r // a + 1):
            if (r // a) % b:
                continue
            dims = tuple(sorted((a, b, r // a // b), reverse=True))
            key = (dims[0] - dims[2], dims[0])
            if best is None or key < best[0]:
                best = (key, dims)
    return best[1]


@dataclass(frozen=True, eq=False)
class RankPartition:
    rank_id: int
    box: DomainBox
    owned_ids: np.ndarray
    ghost_ids: np.ndarray
    neighbor_ranks: tuple[int, ...]

    @property
    def local_ids(self) -> np.ndarray:
        return np.union1d(self.owned_ids, self.ghost_ids)


def _axis_edges(domain: DomainBox, dims) -> list[np.ndarray]:
    lo, ext = np.asarray(domain.lo), domain.extent
    edges = []
    for k in range(3):
        e = lo[k] + ext[k] * (np.arange(dims[k] + 1) / dims[k])
        e[-1] = domain.hi[k]
        edges.append(e)
    return edges


def owner_ranks(domain: DomainBox, dims, pos: np.ndarray) -> np.ndarray:
    """Owning rank of each position (half-open upper faces; boundary clamped)."""
    edges = _axis_edges(domain, dims)
    idx = [np.searchsorted(edges[k][1:-1], pos[:, k], side="right") for k in range(3)]
    return (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]


def decompose(domain: DomainBox, p: ParticleSet, r: int, delta: float = 0.0) -> list[RankPartition]:
    dims = rank_grid(r)
    edges = _axis_edges(domain, dims)
    pos = p.positions()
    owner = owner_ranks(domain, dims, pos)
    boxes = []
    for ix, iy, iz in itertools.product(range(dims[0]), range(dims[1]), range(dims[2])):
        boxes.append(DomainBox(
            (edges[0][ix], edges[1][iy], edges[2][iz]),
            (edges[0][ix + 1], edges[1][iy + 1], edges[2][iz + 1]),
        ))
    parts = []
    for rank, box in enumerate(boxes):
        owned = np.flatnonzero(owner == rank)
        near = box.padded(delta).contains(pos) if r > 1 else np.zeros(p.n, bool)
        ghosts = np.flatnonzero(near & (owner != rank))
        nbrs = tuple(
            q for q, other in enumerate(boxes)
            if q != rank and np.all(np.asarray(other.lo) - delta <= np.asarray(box.hi))
            and np.all(np.asarray(box.lo) <= np.asarray(other.hi) + delta)
        )
        parts.append(RankPartition(rank, box, owned, ghosts, nbrs))
    return parts


@dataclass(frozen=True, eq=False)
class Message:
    sender: int
    receiver: int
    gids: np.ndarray
    coords: np.ndarray  # (len(gids), 3)

    def __len__(self) -> int:
        return len(self.gids)


def _owner_table(partitions, n: int) -> np.ndarray:
    owner = np.full(n, -1, dtype=np.int64)
    for part in partitions:
        owner[part.owned_ids] = part.rank_id
    return owner


def exchange_ghosts(partitions: list[RankPartition], p_current: ParticleSet):
    """Per-rank coordinates of ``local_ids`` plus the messages that carried the ghosts.

    Returns ``(views, messages)``; ``views[r]`` is an ``(n_local, 3)`` array
    in ``partitions[r].local_ids`` order, messages are ordered by receiver,
    sender, then global id.
    """
    pos = p_current.positions()
    owner = _owner_table(partitions, p_current.n)
    views, messages = [], []
    for part in partitions:
        local = part.local_ids
        view = np.empty((len(local), 3))
        own = np.isin(local, part.owned_ids, assume_unique=True)
        view[own] = pos[local[own]]
        senders = owner[part.ghost_ids]
        for s in np.unique(senders):
            gids = part.ghost_ids[senders == s]
            msg = Message(int(s), part.rank_id, gids, pos[gids].copy())
            messages.append(msg)
            view[np.searchsorted(local, msg.gids)] = msg.coords
        views.append(view)
    return views, messages


@dataclass
class DistReport:
    ranks: int
    dims: tuple[int, int, int]
    owned: list[int]
    ghosts: list[int]
    owned_pairs: list[int]
    local_pairs: list[int]
    seconds: list[float]
    ghost_tuples_setup: int = 0
    ghost_tuples_refresh: int = 0
    iterations: int = 0
    converged: bool = False
    final_loss: float = 0.0

    def imbalance(self) -> dict[str, float]:
        return {"time_imbalance": _imbalance(self.seconds), "data_imbalance": _imbalance(self.owned)}

    def as_dict(self) -> dict:
        out = {
            "ranks": self.ranks,
            "rank_grid": "x".join(str(d) for d in self.dims),
            "iterations": self.iterations,
            "converged": int(self.converged),
            "final_loss": self.final_loss,
            "ghost_tuples_setup": self.ghost_tuples_setup,
            "ghost_tuples_refresh": self.ghost_tuples_refresh,
        }
        out.update(self.imbalance())
        for r in range(self.ranks):
            out[f"rank{r}.owned"] = self.owned[r]
            out[f"rank{r}.ghosts"] = self.ghosts[r]
            out[f"rank{r}.owned_pairs"] = self.owned_pairs[r]
            out[f"rank{r}.local_pairs"] = self.local_pairs[r]
            out[f"rank{r}.seconds"] = self.seconds[r]
        return out


def imbalance(report: DistReport) -> dict[str, float]:
    return report.imbalance()


@dataclass(eq=False)
class _Rank:
    part: RankPartition
    editable: np.ndarray  # global ids in slot order
    slot_of: np.ndarray  # global id -> slot, -1 if not editable here
    owned_mask: np.ndarray  # over editable
    pairs: VulnerablePairSet  # global ids, owned pairs first
    n_owned_pairs: int
    slots: tuple  # (pi_o, pj_o, lk_o, pi_n, pj_n, lk_n)
    stepper: Stepper | None
    seconds: float = 0.0
    loss: float = 0.0
    grad: np.ndarray | None = None
    singular: int = 0
    refresh: list = field(default_factory=list)  # (sender rank, my slots, sender slots)

    def evaluate(self, b, c):
        t0 = time.perf_counter()
        pi_o, pj_o, lk_o, pi_n, pj_n, lk_n = self.slots
        if self.stepper is None:
            self.loss, self.grad, self.singular = 0.0, None, 0
            return
        pos = self.stepper.positions
        self.loss, g, self.singular = kernels.pair_terms(pos, pi_o, pj_o, lk_o, b, c, True)
        if len(pi_n):
            _, g2, ns = kernels.pair_terms(pos, pi_n, pj_n, lk_n, b, c, True)
            g = g + g2
            self.singular += ns
        self.grad = g
        self.seconds += time.perf_counter() - t0

    def step(self):
        if self.stepper is None:
            return
        t0 = time.perf_counter()
        self.stepper(self.grad)
        self.seconds += time.perf_counter() - t0


def _setup_rank(part, domain, p_orig, view_hat, owner, delta, params) -> _Rank:
    local = part.local_ids
    bbox = part.box.padded(delta).intersect(domain)
    sub = p_orig.subset(local, bbox)
    v = find_vulnerable_pairs(sub, params.b, params.xi)
    gi, gj = local[v.i], local[v.j]
    mine = owner[gi] == part.rank_id
    order = np.concatenate([np.flatnonzero(mine), np.flatnonzero(~mine)])
    pairs = VulnerablePairSet(gi[order], gj[order], v.orig_linked[order], params.b, params.xi)
    n_own = int(mine.sum())
    editable = slot_order(pairs)
    slot_of = np.full(p_orig.n, -1, dtype=np.int64)
    slot_of[editable] = np.arange(len(editable))
    slot = slot_of[pairs.i], slot_of[pairs.j]
    lk = pairs.orig_linked.astype(np.uint8)
    slots = (slot[0][:n_own], slot[1][:n_own], lk[:n_own], slot[0][n_own:], slot[1][n_own:], lk[n_own:])
    stepper = None
    if len(editable):
        step = None
        if params.optimizer == "vanilla_pgd":
            step = params.vanilla_step or 1.0 / max(lipschitz_estimate(pairs, params), 1e-300)
        orig = p_orig.positions()[editable]
        start = view_hat[np.searchsorted(local, editable)].copy()
        xp = params.xi_prime
        stepper = Stepper(start, orig - xp, orig + xp, params, step)
    owned_mask = owner[editable] == part.rank_id
    return _Rank(part, editable, slot_of, owned_mask, pairs, n_own, slots, stepper)


def _link_refresh(ranks: list[_Rank], owner: np.ndarray) -> None:
    """Precompute, per receiving rank, which editable ghosts each sender refreshes."""
    for rk in ranks:
        ghost_slots = np.flatnonzero(~rk.owned_mask)
        if len(ghost_slots) == 0:
            continue
        senders = owner[rk.editable[ghost_slots]]
        for s in np.unique(senders):
            mine = ghost_slots[senders == s]
            src = ranks[s]
            theirs = src.slot_of[rk.editable[mine]]
            if np.any(theirs < 0):
                raise AssertionError("ghost editable particle is not editable on its owner")
            rk.refresh.append((int(s), mine, theirs))


def _refresh_ghosts(ranks: list[_Rank]) -> int:
    """Deliver owner coordinates of every editable ghost; returns tuples sent."""
    outbox = []
    for rk in ranks:
        for s, mine, theirs in rk.refresh:
            msg = Message(s, rk.part.rank_id, rk.editable[mine], ranks[s].stepper.positions[theirs].copy())
            outbox.append((msg, mine))
    outbox.sort(key=lambda item: (item[0].receiver, item[0].sender))
    sent = 0
    for msg, mine in outbox:
        ranks[msg.receiver].stepper.positions[mine] = msg.coords
        sent += len(msg)
    return sent


def distributed_correct(p_orig: ParticleSet, p_hat0: ParticleSet, params: CorrectionParams, r: int,
                        threads: int = 1, codec_id: int | None = None,
                        domain: DomainBox | None = None) -> tuple[PipelineOutput, DistReport]:
    """Correct with ``r`` simulated ranks and merge the owners' edits into one log."""
    check_bound(p_orig.positions(), p_hat0.positions(), params.xi)
    domain = domain or p_orig.bbox
    delta = search_width(params.b, params.xi)
    parts = decompose(domain, p_orig, r, delta)
    owner = _owner_table(parts, p_orig.n)
    views, msgs = exchange_ghosts(parts, p_hat0)
    ranks = [_setup_rank(part, domain, p_orig, views[k], owner, delta, params) for k, part in enumerate(parts)]
    _link_refresh(ranks, owner)
    b, c = params.b, params.margin
    hat0 = p_hat0.positions()

    n_tight = 0
    for rk in ranks:
        own = rk.pairs.take(slice(0, rk.n_owned_pairs))
        if len(own):
            n_tight += int(active_pairs(hat0, own, b, c).sum())

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and r > 1 else None

    def run(fn):
        if pool is None:
            for rk in ranks:
                fn(rk)
        else:
            list(pool.map(fn, ranks))

    report = DistReport(
        ranks=r, dims=rank_grid(r),
        owned=[len(p.owned_ids) for p in parts], ghosts=[len(p.ghost_ids) for p in parts],
        owned_pairs=[rk.n_owned_pairs for rk in ranks], local_pairs=[len(rk.pairs) for rk in ranks],
        seconds=[0.0] * r, ghost_tuples_setup=sum(len(m) for m in msgs),
    )
    iters = 0
    n_sing = 0
    converged = False
    total = 0.0
    losses = []
    try:
        for _ in range(params.t_max):
            run(lambda rk: rk.evaluate(b, c))
            total = 0.0
            for rk in ranks:
                total += rk.loss
                n_sing += rk.singular
            losses.append(total)
            if total <= params.eps_loss:
                converged = True
                break
            run(lambda rk: rk.step())
            report.ghost_tuples_refresh += _refresh_ghosts(ranks)
            iters += 1
        if not converged:
            run(lambda rk: rk.evaluate(b, c))
            total = 0.0
            for rk in ranks:
                total += rk.loss
            converged = total <= params.eps_loss
    finally:
        if pool is not None:
            pool.shutdown()

    final = hat0.copy()
    for rk in ranks:
        if rk.stepper is None:
            continue
        ids = rk.editable[rk.owned_mask]
        final[ids] = rk.stepper.positions[rk.owned_mask]
    d = np.zeros_like(hat0)
    for rk in ranks:
        ids = rk.editable[rk.owned_mask]
        d[ids] = final[ids] - hat0[ids]

    owned_pairs = [rk.pairs.take(slice(0, rk.n_owned_pairs)) for rk in ranks]
    pairs = VulnerablePairSet(
        np.concatenate([v.i for v in owned_pairs]), np.concatenate([v.j for v in owned_pairs]),
        np.concatenate([v.orig_linked for v in owned_pairs]), params.b, params.xi,
    )
    result = CorrectionResult(
        corrected=p_hat0.with_positions(final), delta=d.reshape(-1), iterations=iters,
        final_loss=total, converged=converged, initial_loss=losses[0] if losses else 0.0,
        n_tight_initial=n_tight, n_singular=n_sing,
    )
    report.seconds = [rk.seconds for rk in ranks]
    report.iterations = iters
    report.converged = converged
    report.final_loss = total
    return finish(p_orig, p_hat0, result, pairs, params, codec_id), report
