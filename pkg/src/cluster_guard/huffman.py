"""Canonical, length-limited Huffman coding over bytes.

Stream layout (all integers little-endian)::

    u64   number of coded symbols (0 means the stream is empty and ends here)
    u16   k, number of distinct symbols
    k x   (u8 symbol, u8 code length)
    ...   code bits, MSB first, zero padded to a byte boundary

Codes are assigned canonically: sorted by (length, symbol), consecutive
integers, left shifted when the length grows.
"""

from __future__ import annotations

import heapq
import struct

import numpy as np

from . import kernels

MAX_CODE_LEN = 16


def code_lengths(counts: np.ndarray, limit: int = MAX_CODE_LEN) -> np.ndarray:
    """Huffman code length per byte value (0 for absent symbols).

    If the optimal tree is deeper than ``limit`` the counts are halved (kept
    >= 1) and the tree rebuilt until it fits.
    """
    counts = np.asarray(counts, dtype=np.int64).copy()
    present = np.flatnonzero(counts)
    lengths = np.zeros(256, dtype=np.int64)
    if len(present) == 0:
        return lengths
    if len(present) == 1:
        lengths[present[0]] = 1
        return lengths
    while True:
        # (weight, tie-break id, leaf symbols); ids make the merge order deterministic
        heap = [(int(counts[s]), int(s), [int(s)]) for s in present]
        heapq.heapify(heap)
        depth = np.zeros(256, dtype=np.int64)
        next_id = 256
        while len(heap) > 1:
            w1, _, l1 = heapq.heappop(heap)
            w2, _, l2 = heapq.heappop(heap)
            merged = l1 + l2
            depth[merged] += 1
            heapq.heappush(heap, (w1 + w2, next_id, merged))
            next_id += 1
        if depth.max() <= limit:
            return depth
        counts[present] = np.maximum(1, counts[present] >> 1)


def canonical_codes(lengths: np.ndarray) -> np.ndarray:
    codes = np.zeros(256, dtype=np.int64)
    syms = [s for s in np.lexsort((np.arange(256), lengths)) if lengths[s] > 0]
    code = 0
    prev = 0
    for s in syms:
        ln = int(lengths[s])
        code <<= ln - prev
        codes[s] = code
        code += 1
        prev = ln
    return codes


def _lookup_table(lengths: np.ndarray, codes: np.ndarray):
    lut_sym = np.zeros(1 << MAX_CODE_LEN, dtype=np.uint8)
    lut_len = np.zeros(1 << MAX_CODE_LEN, dtype=np.uint8)
    for s in np.flatnonzero(lengths):
        ln = int(lengths[s])
        lo = int(codes[s]) << (MAX_CODE_LEN - ln)
        hi = lo + (1 << (MAX_CODE_LEN - ln))
        lut_sym[lo:hi] = s
        lut_len[lo:hi] = ln
    return lut_sym, lut_len


def encode(data: bytes) -> bytes:
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if len(raw) == 0:
        return b""
    lengths = code_lengths(np.bincount(raw, minlength=256))
    codes = canonical_codes(lengths)
    present = np.flatnonzero(lengths)
    head = struct.pack("<QH", len(raw), len(present))
    head += b"".join(struct.pack("<BB", int(s), int(lengths[s])) for s in present)
    sym_len = lengths[raw]
    sym_code = codes[raw]
    total = int(sym_len.sum())
    # expand every code into its bits, MSB first
    starts = np.cumsum(sym_len) - sym_len
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, sym_len)
    shift = np.repeat(sym_len, sym_len) - 1 - within
    bits = ((np.repeat(sym_code, sym_len) >> shift) & 1).astype(np.uint8)
    return head + np.packbits(bits).tobytes()


def decode(stream: bytes) -> tuple[bytes, int]:
    """Decode one stream; returns ``(data, bytes consumed)``."""
    if len(stream) == 0:
        return b"", 0
    if len(stream) < 10:
        raise ValueError("truncated prefix-code header")
    nsym, k = struct.unpack_from("<QH", stream, 0)
    if nsym == 0:
        return b"", 10
    off = 10
    if k == 0 or k > 256 or len(stream) < off + 2 * k:
        raise ValueError("corrupt prefix-code table")
    lengths = np.zeros(256, dtype=np.int64)
    for s, ln in struct.iter_unpack("<BB", stream[off:off + 2 * k]):
        if not 1 <= ln <= MAX_CODE_LEN:
            raise ValueError("corrupt prefix-code length")
        lengths[s] = ln
    off += 2 * k
    kraft = float(np.sum(2.0 ** -lengths[lengths > 0]))
    if kraft > 1.0 + 1e-12:
        raise ValueError("prefix-code lengths violate the Kraft inequality")
    codes = canonical_codes(lengths)
    lut_sym, lut_len = _lookup_table(lengths, codes)
    out = np.asarray(kernels.huff_decode(stream[off:], int(nsym), lut_sym, lut_len, MAX_CODE_LEN))
    used = int(lengths[out].sum())
    return out.tobytes(), off + (used + 7) // 8
