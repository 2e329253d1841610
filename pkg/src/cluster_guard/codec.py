"""Edit log: compaction, quantisation and the on-disk container.

Edits are a dense ``3N`` array in interleaved order ``x0, y0, z0, x1, ...``.
A bitmask marks the nonzero entries (bit ``k`` is bit ``k % 8`` of byte
``k // 8``); the marked entries are quantised onto the lattice ``k * s`` with
``s = xi * 2**(1 - m)`` and stored as signed indices in mask order.

Container layout (little-endian)::

    0   4s  magic b"CGED"
    4   u8  version (1)
    5   u8  m
    6   u16 reserved, 0
    8   u64 n
    16  f64 xi
    24  f64 b
    32  u64 n_edits
    40  u32 len, u8 codec, payload      flags block
        u32 len, u8 codec, payload      index block
        u32 CRC-32 of both blocks (length fields included)

``len`` counts the codec byte plus payload. Codec 0 stores the prefix-coded
stream as is, codec 1 wraps it in zstd. See ``docs/format.md``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
import zstandard

from . import huffman
from .particles import ParticleSet

MAGIC = b"CGED"
VERSION = 1
HEADER = struct.Struct("<4sBBHQddQ")
CODEC_STORED = 0
CODEC_ZSTD = 1
ZSTD_LEVEL = 9


class EditLogError(ValueError):
    """Malformed, truncated or corrupted edit-log stream."""


# ---------------------------------------------------------------------------
# compaction and quantisation


def flags_nbytes(n: int) -> int:
    return (3 * n + 7) // 8


def compact(delta, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Bitmask of nonzero entries of ``delta`` and those entries in index order."""
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if len(delta) != 3 * n:
        raise ValueError(f"delta has {len(delta)} entries, expected {3 * n}")
    nz = delta != 0
    return np.packbits(nz, bitorder="little"), delta[nz]


def scatter(flags, values, n: int) -> np.ndarray:
    """Inverse of :func:`compact`: dense ``3N`` array with ``values`` at the set bits."""
    mask = np.unpackbits(np.asarray(flags, dtype=np.uint8), count=3 * n, bitorder="little").astype(bool)
    values = np.asarray(values)
    if int(mask.sum()) != len(values):
        raise ValueError("flag count does not match the number of values")
    out = np.zeros(3 * n, dtype=np.float64 if values.dtype.kind == "f" else values.dtype)
    out[mask] = values
    return out


def quant_step(xi: float, m: int) -> float:
    return float(np.ldexp(xi, 1 - m))


def quantize(values, xi: float, m: int) -> np.ndarray:
    """Nearest lattice index, ties to even. Values must lie in ``[-2 xi, 2 xi]``."""
    if m < 2:
        raise ValueError("bit depth m must be >= 2")
    values = np.asarray(values, dtype=np.float64)
    if values.size and float(np.max(np.abs(values))) > 2.0 * xi:
        raise ValueError("edit magnitude exceeds 2*xi")
    return np.rint(values / quant_step(xi, m)).astype(np.int64)


def dequantize(indices, xi: float, m: int) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64) * quant_step(xi, m)


# ---------------------------------------------------------------------------
# the log and its container


@dataclass(frozen=True, eq=False)
class EditLog:
    n: int
    m: int
    xi: float
    b: float
    flags: np.ndarray
    qvals: np.ndarray
    codecs: tuple[int, int] | None = None

    def __post_init__(self):
        flags = np.ascontiguousarray(self.flags, dtype=np.uint8)
        qvals = np.ascontiguousarray(self.qvals, dtype=np.int64)
        object.__setattr__(self, "flags", flags)
        object.__setattr__(self, "qvals", qvals)
        if len(flags) != flags_nbytes(self.n):
            raise EditLogError(f"flags need {flags_nbytes(self.n)} bytes, got {len(flags)}")
        if int(np.unpackbits(flags).sum()) != len(qvals):
            raise EditLogError("popcount(flags) differs from the number of indices")
        if 3 * self.n % 8 and len(flags) and flags[-1] >> (3 * self.n % 8):
            raise EditLogError("padding bits of the last flag byte are set")
        if len(qvals) and int(np.abs(qvals).max()) > 1 << self.m:
            raise EditLogError("index magnitude exceeds 2**m")

    @classmethod
    def empty(cls, n: int, xi: float, b: float, m: int = 16) -> "EditLog":
        return cls(n, m, xi, b, np.zeros(flags_nbytes(n), np.uint8), np.zeros(0, np.int64))

    @property
    def n_edits(self) -> int:
        return len(self.qvals)

    def delta(self) -> np.ndarray:
        """Dequantised dense edits, interleaved."""
        return scatter(self.flags, dequantize(self.qvals, self.xi, self.m), self.n)

    def same_content(self, other: "EditLog") -> bool:
        return (
            (self.n, self.m, self.xi, self.b) == (other.n, other.m, other.xi, other.b)
            and np.array_equal(self.flags, other.flags)
            and np.array_equal(self.qvals, other.qvals)
        )


def _zigzag(k: np.ndarray) -> np.ndarray:
    return ((k << 1) ^ (k >> 63)).view(np.uint64)


def _unzigzag(u: np.ndarray) -> np.ndarray:
    return ((u >> np.uint64(1)).view(np.int64)) ^ -((u & np.uint64(1)).view(np.int64))


def _index_bytes(qvals: np.ndarray) -> bytes:
    """Width byte then little-endian byte planes of the zigzagged indices."""
    if len(qvals) == 0:
        return b""
    z = _zigzag(qvals)
    width = max(1, (int(z.max()).bit_length() + 7) // 8)
    planes = z.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :width]
    return bytes([width]) + planes.T.tobytes()


def _index_values(raw: bytes, count: int) -> np.ndarray:
    if count == 0:
        if raw:
            raise EditLogError("index block present without edits")
        return np.zeros(0, np.int64)
    width = raw[0] if raw else 0
    if not 1 <= width <= 8 or len(raw) != 1 + width * count:
        raise EditLogError("index block has the wrong size")
    planes = np.frombuffer(raw, dtype=np.uint8, offset=1).reshape(width, count)
    full = np.zeros((count, 8), dtype=np.uint8)
    full[:, :width] = planes.T
    return _unzigzag(full.view("<u8").reshape(-1).astype(np.uint64))


def _pack_block(raw: bytes, codec: int | None) -> bytes:
    coded = huffman.encode(raw)
    if not coded:
        codec = CODEC_STORED
    candidates = {CODEC_STORED: coded}
    if codec in (None, CODEC_ZSTD):
        candidates[CODEC_ZSTD] = zstandard.ZstdCompressor(level=ZSTD_LEVEL).compress(coded)
    if codec is None:
        codec = min(candidates, key=lambda c: (len(candidates[c]), c))
    if codec not in candidates:
        raise ValueError(f"unknown codec id {codec}")
    body = bytes([codec]) + candidates[codec]
    return struct.pack("<I", len(body)) + body


def _unpack_block(data: bytes, off: int) -> tuple[bytes, int, int]:
    if off + 4 > len(data):
        raise EditLogError("truncated block length")
    (ln,) = struct.unpack_from("<I", data, off)
    off += 4
    if ln < 1 or off + ln > len(data):
        raise EditLogError("truncated block")
    codec = data[off]
    payload = data[off + 1:off + ln]
    if codec == CODEC_STORED:
        coded = payload
    elif codec == CODEC_ZSTD:
        try:
            coded = zstandard.ZstdDecompressor().decompress(payload)
        except zstandard.ZstdError as exc:
            raise EditLogError(f"zstd payload: {exc}") from exc
    else:
        raise EditLogError(f"unknown codec id {codec}")
    try:
        raw, used = huffman.decode(coded)
    except ValueError as exc:
        raise EditLogError(str(exc)) from exc
    if used != len(coded):
        raise EditLogError("trailing bytes after prefix-coded stream")
    return raw, codec, off + ln


def encode(log: EditLog, codec: int | None = None) -> bytes:
    """Serialise ``log``.

    ``codec`` pins the stage-2 codec for both blocks; by default the one
    recorded in ``log.codecs`` is used, else the smaller of stored and zstd
    (stored on ties). Empty blocks are always stored.
    """
    codecs = (codec, codec) if codec is not None else (log.codecs or (None, None))
    head = HEADER.pack(MAGIC, VERSION, log.m, 0, log.n, log.xi, log.b, log.n_edits)
    flags_raw = log.flags.tobytes() if log.n_edits else b""
    blocks = _pack_block(flags_raw, codecs[0]) + _pack_block(_index_bytes(log.qvals), codecs[1])
    return head + blocks + struct.pack("<I", zlib.crc32(blocks))


def decode(data: bytes) -> EditLog:
    data = bytes(data)
    if len(data) < HEADER.size:
        raise EditLogError("truncated header")
    magic, version, m, reserved, n, xi, b, n_edits = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EditLogError("bad magic")
    if version != VERSION:
        raise EditLogError(f"unsupported version {version}")
    if reserved != 0:
        raise EditLogError("reserved header field is nonzero")
    if len(data) < HEADER.size + 4:
        raise EditLogError("truncated stream")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    blocks = data[HEADER.size:-4]
    if zlib.crc32(blocks) != crc:
        raise EditLogError("checksum mismatch")
    flags_raw, c0, off = _unpack_block(data, HEADER.size)
    idx_raw, c1, off = _unpack_block(data, off)
    if off != len(data) - 4:
        raise EditLogError("unexpected bytes after the index block")
    if n_edits == 0:
        if flags_raw:
            raise EditLogError("flag block present without edits")
        flags = np.zeros(flags_nbytes(n), np.uint8)
    else:
        flags = np.frombuffer(flags_raw, dtype=np.uint8)
    qvals = _index_values(idx_raw, n_edits)
    try:
        return EditLog(n, m, xi, b, flags, qvals, (c0, c1))
    except EditLogError:
        raise
    except ValueError as exc:
        raise EditLogError(str(exc)) from exc


# ---------------------------------------------------------------------------
# building and applying


def apply_edits(p_hat0: ParticleSet, log: EditLog) -> ParticleSet:
    """``p_hat0`` plus the dequantised edits."""
    if log.n != p_hat0.n:
        raise ValueError(f"edit log is for {log.n} particles, data has {p_hat0.n}")
    if log.n_edits == 0:
        return p_hat0
    flat = p_hat0.interleaved() + log.delta()
    return p_hat0.with_positions(flat.reshape(-1, 3))


def build_edit_log(p_orig: ParticleSet, p_hat0: ParticleSet, delta, xi: float, b: float,
                   m: int = 16) -> EditLog:
    """Compact and quantise ``delta`` so that the reconstruction stays within ``xi``.

    In exact arithmetic rounding to the lattice already keeps every coordinate
    inside the bound; when floating point rounding of ``hat0 + k*s`` lands a
    hair outside, the index is moved one step toward the original.
    """
    flags, values = compact(delta, p_hat0.n)
    if len(values) == 0:
        return EditLog(p_hat0.n, m, xi, b, flags, np.zeros(0, np.int64))
    k = quantize(values, xi, m)
    nz = np.unpackbits(flags, count=3 * p_hat0.n, bitorder="little").astype(bool)
    base = p_hat0.interleaved()[nz]
    orig = p_orig.interleaved()[nz]
    s = quant_step(xi, m)
    for _ in range(4):
        err = (base + k * s) - orig
        out = np.abs(err) > xi
        if not out.any():
            break
        k[out] -= np.sign(err[out]).astype(np.int64)
    else:
        raise ArithmeticError("could not place edits inside the error bound")
    return EditLog(p_hat0.n, m, xi, b, flags, k)
