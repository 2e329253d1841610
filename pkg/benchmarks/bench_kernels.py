"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --n 100000 --repeat 5

Both backends get identical inputs; outputs are checked for equality before
timings are reported.
"""

import argparse
import timeit

import numpy as np

from cluster_guard import huffman, kernels
from cluster_guard.base import base_compress
from cluster_guard.grid import band_limits, build_grid, find_vulnerable_pairs, search_width
from cluster_guard.particles import SynthSpec, absolute_bound, gen_synthetic, linking_length, scaled


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if a is None or np.isscalar(a):
        return a == b
    return np.array_equal(np.asarray(a), np.asarray(b))


def cases(n, xi_rel, seed):
    p = scaled(gen_synthetic(SynthSpec("clustered", n, 20, 0.02, 0.2, seed)), 256.0)
    b = linking_length(0.2, p.bbox.volume, p.n)
    xi = absolute_bound(p, xi_rel)
    g = build_grid(p, search_width(b, xi))
    pos = p.positions()
    lo2, hi2 = band_limits(b, xi)
    grid_args = (pos, g.cell_of, g.cell_start, g.sorted_ids, g.dims)

    v = find_vulnerable_pairs(p, b, xi)
    hat = base_compress(p, xi).decompressed.positions()
    ed = v.editable
    slot = np.full(p.n, -1, dtype=np.int64)
    slot[ed] = np.arange(len(ed))
    c = 2 * np.sqrt(3) * 2 * xi / (2**16 - 1)

    rng = np.random.default_rng(seed)
    text = rng.geometric(0.15, 2_000_000).clip(0, 255).astype(np.uint8)
    lengths = huffman.code_lengths(np.bincount(text, minlength=256))
    sym, ln = huffman._lookup_table(lengths, huffman.canonical_codes(lengths))
    stream = huffman.encode(text.tobytes())
    body = stream[10 + 2 * int(np.count_nonzero(lengths)):]

    return {
        "cell_sort": lambda k: k.cell_sort(pos, g.lo, g.scale, g.dims),
        "band_pairs": lambda k: k.band_pairs(*grid_args, lo2, hi2, b * b),
        "fof_labels": lambda k: k.fof_labels(*grid_args, b * b),
        "pair_terms": lambda k: k.pair_terms(hat[ed], slot[v.i], slot[v.j], v.orig_linked.astype(np.uint8), b, c),
        "huff_decode": lambda k: k.huff_decode(body, len(text), sym, ln, huffman.MAX_CODE_LEN),
    }, {"n": n, "pairs": len(v), "editable": len(ed), "symbols": len(text)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--xi-rel", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        print("compiled kernels are not built; only the numpy backend is available")
        return 1
    fns, sizes = cases(args.n, args.xi_rel, args.seed)
    print(" ".join(f"{k}={v}" for k, v in sizes.items()))
    print(f"{'kernel':<12} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    for name, fn in fns.items():
        if not _same(fn(py), fn(cy)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        print(f"{name:<12} {1e3 * t_py:10.2f} {1e3 * t_cy:10.2f} {t_py / t_cy:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
