# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Output matches ``_pykernels`` bit for bit."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport int64_t, uint8_t, uint16_t, uint64_t

cnp.import_array()

cdef int64_t[14][3] OFFS
_offs = [(0, 0, 0)] + [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)
]
for _o in range(14):
    for _a in range(3):
        OFFS[_o][_a] = _offs[_o][_a]


def cell_sort(const double[:, ::1] pos, lo, scale, dims):
    cdef Py_ssize_t n = pos.shape[0], i
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double s0 = scale[0], s1 = scale[1], s2 = scale[2]
    cdef int64_t nx = dims[0], ny = dims[1], nz = dims[2]
    cdef int64_t ncell = nx * ny * nz, ix, iy, iz, c
    cell_of_a = np.empty(n, dtype=np.int64)
    start_a = np.zeros(ncell + 1, dtype=np.int64)
    sorted_a = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] cell_of = cell_of_a
    cdef int64_t[::1] start = start_a
    cdef int64_t[::1] srt = sorted_a
    cdef int64_t[::1] fill
    with nogil:
        for i in range(n):
            ix = <int64_t>((pos[i, 0] - lo0) * s0)
            iy = <int64_t>((pos[i, 1] - lo1) * s1)
            iz = <int64_t>((pos[i, 2] - lo2) * s2)
            if ix < 0:
                ix = 0
            elif ix >= nx:
                ix = nx - 1
            if iy < 0:
                iy = 0
            elif iy >= ny:
                iy = ny - 1
            if iz < 0:
                iz = 0
            elif iz >= nz:
                iz = nz - 1
            c = (ix * ny + iy) * nz + iz
            cell_of[i] = c
            start[c + 1] += 1
        for c in range(ncell):
            start[c + 1] += start[c]
    fill_a = start_a[:ncell].copy()
    fill = fill_a
    with nogil:
        for i in range(n):
            c = cell_of[i]
            srt[fill[c]] = i
            fill[c] += 1
    return cell_of_a, start_a, sorted_a


cdef inline int64_t _nb_range(int64_t o, int64_t apos, int64_t c, int64_t nx, int64_t ny,
                              int64_t nz, const int64_t[::1] start, int64_t* beg) noexcept nogil:
    """Neighbour cell range for offset ``o``; returns the end (beg set via pointer)."""
    cdef int64_t ix, iy, iz, jx, jy, jz, nc
    if o == 0:
        beg[0] = apos + 1
        return start[c + 1]
    iz = c % nz
    iy = (c // nz) % ny
    ix = c // (ny * nz)
    jx = ix + OFFS[o][0]
    jy = iy + OFFS[o][1]
    jz = iz + OFFS[o][2]
    if jx < 0 or jx >= nx or jy < 0 or jy >= ny or jz < 0 or jz >= nz:
        beg[0] = 0
        return 0
    nc = (jx * ny + jy) * nz + jz
    beg[0] = start[nc]
    return start[nc + 1]


cdef int64_t _band_pass(const double[:, ::1] pos, const int64_t[::1] cell_of,
                        const int64_t[::1] start, const int64_t[::1] srt,
                        int64_t nx, int64_t ny, int64_t nz, double lo2, double hi2, double b2,
                        int64_t[::1] oi, int64_t[::1] oj, uint8_t[::1] ol, bint fill) noexcept nogil:
    cdef Py_ssize_t n = srt.shape[0]
    cdef int64_t apos, bpos, a, b, o, c, beg, end, k = 0
    cdef double dx, dy, dz, d2
    for apos in range(n):
        a = srt[apos]
        c = cell_of[a]
        for o in range(14):
            end = _nb_range(o, apos, c, nx, ny, nz, start, &beg)
            for bpos in range(beg, end):
                b = srt[bpos]
                dx = pos[a, 0] - pos[b, 0]
                dy = pos[a, 1] - pos[b, 1]
                dz = pos[a, 2] - pos[b, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > lo2 and d2 <= hi2:
                    if fill:
                        if a < b:
                            oi[k] = a
                            oj[k] = b
                        else:
                            oi[k] = b
                            oj[k] = a
                        ol[k] = 1 if d2 <= b2 else 0
                    k += 1
    return k


def band_pairs(const double[:, ::1] pos, const int64_t[::1] cell_of,
               const int64_t[::1] cell_start, const int64_t[::1] sorted_ids,
               dims, double lo2, double hi2, double b2):
    cdef int64_t nx = dims[0], ny = dims[1], nz = dims[2], count
    cdef int64_t[::1] di = np.zeros(1, dtype=np.int64)
    cdef uint8_t[::1] dl = np.zeros(1, dtype=np.uint8)
    with nogil:
        count = _band_pass(pos, cell_of, cell_start, sorted_ids, nx, ny, nz,
                           lo2, hi2, b2, di, di, dl, False)
    oi_a = np.empty(count, dtype=np.int64)
    oj_a = np.empty(count, dtype=np.int64)
    ol_a = np.empty(count, dtype=np.uint8)
    cdef int64_t[::1] oi = oi_a
    cdef int64_t[::1] oj = oj_a
    cdef uint8_t[::1] ol = ol_a
    if count:
        with nogil:
            _band_pass(pos, cell_of, cell_start, sorted_ids, nx, ny, nz,
                       lo2, hi2, b2, oi, oj, ol, True)
    return oi_a, oj_a, ol_a


cdef inline int64_t _find(int64_t[::1] parent, int64_t x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def fof_labels(const double[:, ::1] pos, const int64_t[::1] cell_of,
               const int64_t[::1] cell_start, const int64_t[::1] sorted_ids,
               dims, double b2):
    cdef Py_ssize_t n = pos.shape[0]
    cdef int64_t nx = dims[0], ny = dims[1], nz = dims[2]
    cdef int64_t apos, bpos, a, b, o, c, beg, end, ra, rb, i
    cdef double dx, dy, dz, d2
    parent_a = np.arange(n, dtype=np.int64)
    size_a = np.ones(n, dtype=np.int64)
    labels_a = np.empty(n, dtype=np.int64)
    minidx_a = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] parent = parent_a
    cdef int64_t[::1] size = size_a
    cdef int64_t[::1] labels = labels_a
    cdef int64_t[::1] minidx = minidx_a
    with nogil:
        for apos in range(n):
            a = sorted_ids[apos]
            c = cell_of[a]
            for o in range(14):
                end = _nb_range(o, apos, c, nx, ny, nz, cell_start, &beg)
                for bpos in range(beg, end):
                    b = sorted_ids[bpos]
                    dx = pos[a, 0] - pos[b, 0]
                    dy = pos[a, 1] - pos[b, 1]
                    dz = pos[a, 2] - pos[b, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= b2:
                        ra = _find(parent, a)
                        rb = _find(parent, b)
                        if ra != rb:
                            if size[ra] < size[rb]:
                                ra, rb = rb, ra
                            parent[rb] = ra
                            size[ra] += size[rb]
        for i in range(n):
            minidx[i] = n
        for i in range(n):
            ra = _find(parent, i)
            if i < minidx[ra]:
                minidx[ra] = i
        for i in range(n):
            labels[i] = minidx[_find(parent, i)]
    return labels_a


def pair_terms(const double[:, ::1] pos, const int64_t[::1] pi, const int64_t[::1] pj,
               const uint8_t[::1] linked, double b, double c, bint want_grad=True):
    cdef Py_ssize_t k = pos.shape[0], m = pi.shape[0], p
    cdef double lo_thr = b - c, hi_thr = b + c
    cdef double dx, dy, dz, dh, t, coef, gx, gy, gz, loss = 0.0
    cdef int64_t i, j, n_sing = 0
    cdef bint active, broken
    grad_a = np.zeros((k, 3)) if want_grad else None
    cdef double[:, ::1] grad
    if want_grad:
        grad = grad_a
    with nogil:
        for p in range(m):
            i = pi[p]
            j = pj[p]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            dh = sqrt(dx * dx + dy * dy + dz * dz)
            broken = linked[p] != 0
            if broken:
                active = dh > lo_thr
                t = dh - lo_thr
            else:
                active = dh <= hi_thr
                t = hi_thr - dh
            if not active:
                continue
            loss += t * t
            if not broken and dh == 0.0:
                n_sing += 1
                if want_grad:
                    gx = -2.0 * t
                    grad[i, 0] += gx
                    grad[j, 0] -= gx
                continue
            if not want_grad:
                continue
            if broken:
                coef = 2.0 * t / dh
            else:
                coef = -2.0 * t / dh
            gx = dx * coef
            gy = dy * coef
            gz = dz * coef
            grad[i, 0] += gx
            grad[i, 1] += gy
            grad[i, 2] += gz
            grad[j, 0] -= gx
            grad[j, 1] -= gy
            grad[j, 2] -= gz
    return loss, grad_a, n_sing


def huff_decode(data, Py_ssize_t nsym, const uint8_t[::1] lut_sym, const uint8_t[::1] lut_len,
                int max_len):
    cdef const uint8_t[::1] raw = np.frombuffer(bytes(data), dtype=np.uint8)
    cdef Py_ssize_t nbytes = raw.shape[0], p = 0, k
    cdef int64_t nbits = 8 * nbytes, used = 0
    cdef uint64_t acc = 0, mask = (1 << max_len) - 1, window
    cdef int nacc = 0, ln
    cdef bint bad = False
    out_a = np.empty(nsym, dtype=np.uint8)
    cdef uint8_t[::1] out = out_a
    with nogil:
        for k in range(nsym):
            while nacc < max_len:
                acc = (acc << 8) | (raw[p] if p < nbytes else 0)
                p += 1
                nacc += 8
            window = (acc >> (nacc - max_len)) & mask
            ln = lut_len[window]
            used += ln
            if ln == 0 or used > nbits:
                bad = True
                break
            out[k] = lut_sym[window]
            nacc -= ln
            acc &= ((<uint64_t>1) << nacc) - 1
    if bad:
        raise ValueError("corrupt prefix-coded stream")
    return out_a
