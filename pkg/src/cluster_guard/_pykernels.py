"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Both produce identical output, including floating point bits: pair order is
(sorted position of the first particle, neighbour offset, sorted position of
the second particle) and all reductions run sequentially in pair order.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

# the cell itself, then the 13 lexicographically positive neighbour offsets
OFFSETS = np.array(
    [(0, 0, 0)]
    + [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ],
    dtype=np.int64,
)

_CHUNK = 1 << 22
_EMPTY_I = np.zeros(0, dtype=np.int64)


def cell_sort(pos, lo, scale, dims):
    """Counting-sort particles into a uniform grid.

    Returns ``(cell_of, cell_start, sorted_ids)``; ``sorted_ids`` is stable in
    particle index within a cell.
    """
    n = len(pos)
    dims = np.asarray(dims, dtype=np.int64)
    idx = ((pos - lo) * scale).astype(np.int64)
    np.clip(idx, 0, dims - 1, out=idx)
    cell_of = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2] if n else _EMPTY_I.copy()
    ncell = int(np.prod(dims))
    counts = np.bincount(cell_of, minlength=ncell)
    cell_start = np.zeros(ncell + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    sorted_ids = np.argsort(cell_of, kind="stable").astype(np.int64)
    return cell_of.astype(np.int64), cell_start, sorted_ids


def _neighbour_ranges(cell_of, cell_start, sorted_ids, dims):
    n = len(sorted_ids)
    nx, ny, nz = (int(d) for d in dims)
    scell = cell_of[sorted_ids]
    ix = scell // (ny * nz)
    iy = (scell // nz) % ny
    iz = scell % nz
    beg = np.zeros((n, len(OFFSETS)), dtype=np.int64)
    end = np.zeros((n, len(OFFSETS)), dtype=np.int64)
    beg[:, 0] = np.arange(1, n + 1)
    end[:, 0] = cell_start[scell + 1]
    for o, (dx, dy, dz) in enumerate(OFFSETS[1:], start=1):
        jx, jy, jz = ix + dx, iy + dy, iz + dz
        ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny) & (jz >= 0) & (jz < nz)
        nc = ((jx * ny + jy) * nz + jz)[ok]
        beg[ok, o] = cell_start[nc]
        end[ok, o] = cell_start[nc + 1]
    return beg, np.maximum(end - beg, 0)


def _candidates(pos, cell_of, cell_start, sorted_ids, dims):
    """Yield chunks of ``(a, b, d2)`` candidate pairs in traversal order."""
    n = len(sorted_ids)
    if n < 2:
        return
    beg, cnt = _neighbour_ranges(cell_of, cell_start, sorted_ids, dims)
    spos = pos[sorted_ids]
    per_row = cnt.sum(axis=1)
    cum = np.cumsum(per_row)
    s = 0
    while s < n:
        base = cum[s - 1] if s else 0
        e = int(np.searchsorted(cum, base + _CHUNK, side="right"))
        e = min(max(e, s + 1), n)
        c = cnt[s:e].ravel()
        total = int(c.sum())
        if total:
            b0 = beg[s:e].ravel()
            rows = np.repeat(np.arange(s, e, dtype=np.int64), len(OFFSETS))
            excl = np.cumsum(c) - c
            within = np.arange(total, dtype=np.int64) - np.repeat(excl, c)
            a_pos = np.repeat(rows, c)
            b_pos = np.repeat(b0, c) + within
            d = spos[a_pos] - spos[b_pos]
            d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
            yield sorted_ids[a_pos], sorted_ids[b_pos], d2
        s = e


def band_pairs(pos, cell_of, cell_start, sorted_ids, dims, lo2, hi2, b2):
    """Pairs with ``lo2 < d^2 <= hi2``, as ``(i, j, linked)`` with ``i < j``."""
    out_i, out_j, out_l = [], [], []
    for a, b, d2 in _candidates(pos, cell_of, cell_start, sorted_ids, dims):
        keep = (d2 > lo2) & (d2 <= hi2)
        a, b, d2 = a[keep], b[keep], d2[keep]
        out_i.append(np.minimum(a, b))
        out_j.append(np.maximum(a, b))
        out_l.append(d2 <= b2)
    if not out_i:
        return _EMPTY_I.copy(), _EMPTY_I.copy(), np.zeros(0, dtype=np.uint8)
    return (
        np.concatenate(out_i),
        np.concatenate(out_j),
        np.concatenate(out_l).astype(np.uint8),
    )


def fof_labels(pos, cell_of, cell_start, sorted_ids, dims, b2):
    """Connected components of the ``d^2 <= b2`` graph, labelled by smallest member."""
    n = len(pos)
    if n == 0:
        return _EMPTY_I.copy()
    i, j, _ = band_pairs(pos, cell_of, cell_start, sorted_ids, dims, -1.0, b2, b2)
    graph = coo_matrix((np.ones(len(i), dtype=np.int8), (i, j)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    _, first = np.unique(comp, return_index=True)
    return first[comp].astype(np.int64)


def pair_terms(pos, pi, pj, linked, b, c, want_grad=True):
    """Tightened violation loss over pairs and its gradient.

    ``pos`` is ``(k, 3)``; ``pi``/``pj`` index into it. ``c`` is the safety
    margin (0 gives the plain loss). Returns ``(loss, grad, n_singular)`` where
    ``n_singular`` counts coincident active false-link pairs that were given
    a fixed +x direction.
    """
    k = len(pos)
    grad = np.zeros((k, 3)) if want_grad else None
    if len(pi) == 0:
        return 0.0, grad, 0
    lo_thr = b - c
    hi_thr = b + c
    d = pos[pi] - pos[pj]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    dh = np.sqrt(dx * dx + dy * dy + dz * dz)
    lk = linked.astype(bool)
    broken = lk & (dh > lo_thr)
    false = ~lk & (dh <= hi_thr)
    active = broken | false
    t = np.where(broken, dh - lo_thr, hi_thr - dh)
    tt = (t * t)[active]
    loss = float(np.cumsum(tt)[-1]) if len(tt) else 0.0
    singular = false & (dh == 0.0)
    n_sing = int(singular.sum())
    if not want_grad:
        return loss, None, n_sing
    act = np.flatnonzero(active)
    if len(act) == 0:
        return loss, grad, n_sing
    ta, dha = t[act], dh[act]
    regular = ~singular[act]
    safe = np.where(regular, dha, 1.0)
    coef = np.where(broken[act], 2.0 * ta / safe, -2.0 * ta / safe)
    g = d[act] * coef[:, None]
    sing = ~regular
    if sing.any():
        g[sing] = 0.0
        g[sing, 0] = -2.0 * ta[sing]
    idx = np.empty(2 * len(act), dtype=np.int64)
    idx[0::2] = pi[act]
    idx[1::2] = pj[act]
    w = np.empty(2 * len(act))
    for ax in range(3):
        w[0::2] = g[:, ax]
        w[1::2] = -g[:, ax]
        grad[:, ax] = np.bincount(idx, weights=w, minlength=k)
    return loss, grad, n_sing


def huff_decode(data, nsym, lut_sym, lut_len, max_len):
    """Decode ``nsym`` MSB-first prefix codes using a ``2**max_len`` lookup table."""
    raw = bytes(data)
    nbits = 8 * len(raw)
    out = np.empty(nsym, dtype=np.uint8)
    syms = lut_sym.tolist()
    lens = lut_len.tolist()
    mask = (1 << max_len) - 1
    acc = nacc = p = used = 0
    for k in range(nsym):
        while nacc < max_len:
            acc = (acc << 8) | (raw[p] if p < len(raw) else 0)
            p += 1
            nacc += 8
        window = (acc >> (nacc - max_len)) & mask
        ln = lens[window]
        used += ln
        if ln == 0 or used > nbits:
            raise ValueError("corrupt prefix-coded stream")
        out[k] = syms[window]
        nacc -= ln
        acc &= (1 << nacc) - 1
    return out
