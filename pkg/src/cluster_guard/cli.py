"""Command-line front end.

Every command prints a ``key=value`` report on stdout, one field per line.
Exit codes: 0 success, 2 correction did not converge, 64 usage error,
65 data error (unreadable, malformed or inconsistent inputs).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import codec, kernels
from .base import base_compress, count_violations
from .corrector import BoundViolationError, CorrectionParams, violated_pairs
from .distributed import distributed_correct
from .fof import fof_components, halo_catalog
from .grid import find_vulnerable_pairs
from .metrics import hmf, hmf_rel_error, mcc_counts, psnr
from .particles import (
    ParticleDataError, SynthSpec, absolute_bound, env_threads, gen_synthetic, linking_length,
    narrowest_dtype, read_dataset, read_meta, scaled, write_raw,
)
from .pipeline import correct_and_encode

EXIT_OK = 0
EXIT_NOCONV = 2
EXIT_USAGE = 64
EXIT_DATA = 65


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class DataError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(float(x) if isinstance(x, np.floating) else x) for x in v)
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, np.floating):
        return _fmt(float(v))
    return str(v)


def emit(report: dict, out=None) -> None:
    out = out or sys.stdout
    for k, v in report.items():
        out.write(f"{k}={_fmt(v)}\n")
    out.flush()


def parse_report(text: str) -> dict[str, str]:
    """Inverse of the printed report (values stay strings)."""
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# shared option groups


def _add_bound(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--xi", type=float, help="absolute per-coordinate error bound")
    g.add_argument("--xi-rel", type=float, help="error bound relative to the global value range")


def _add_linking(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--b", type=float, help="linking length")
    g.add_argument("--eta", type=float, help="linking length in units of the mean separation")


def _bound(args, p) -> float:
    xi = args.xi if args.xi is not None else absolute_bound(p, args.xi_rel)
    if not xi > 0:
        raise DataError(f"error bound must be positive, got {xi!r}")
    return xi


def _linking(args, p) -> float:
    if args.b is not None:
        if not args.b > 0:
            raise DataError("linking length must be positive")
        return args.b
    try:
        return linking_length(args.eta, p.bbox.volume, p.n)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _threads(args) -> int:
    return args.threads if args.threads else env_threads(1)


def _meta_int(prefix, key):
    path = Path(f"{prefix}.meta")
    if path.exists():
        val = read_meta(path).get(key)
        if val is not None:
            return int(val)
    return None


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    spec = SynthSpec(args.kind, args.n, args.blobs, args.sigma, args.background_fraction, args.seed)
    p = gen_synthetic(spec)
    if args.box != 1.0:
        p = scaled(p, args.box)
        if narrowest_dtype(p) != "f32":
            pos = p.positions().astype(np.float32).astype(np.float64)
            p = p.with_positions(pos)
    meta = {"kind": spec.kind, "seed": spec.seed, "blobs": spec.blobs, "sigma": spec.sigma,
            "background_fraction": spec.background_fraction, "box": args.box}
    paths = write_raw(args.out, p, "f32", meta)
    emit({"n": p.n, "files": " ".join(str(x) for x in paths), "bytes_per_file": 4 * p.n})
    return EXIT_OK


def cmd_base_compress(args) -> int:
    p = read_dataset(args.input)
    xi = _bound(args, p)
    out = base_compress(p, xi)
    write_raw(args.out, out.decompressed, "auto", {"xi": xi, "base_bytes": out.payload_bytes})
    nviol, worst = count_violations(p, out.decompressed, xi)
    emit({"n": p.n, "xi": xi, "base_bytes": out.payload_bytes, "outliers": out.n_outliers,
          "max_error": worst, "bound_violations": nviol})
    return EXIT_OK


def cmd_correct(args) -> int:
    p = read_dataset(args.orig)
    xi = _bound(args, p)
    b = _linking(args, p)
    if args.decomp:
        hat = read_dataset(args.decomp)
        base_bytes = _meta_int(args.decomp, "base_bytes")
    else:
        bo = base_compress(p, xi)
        hat = bo.decompressed
        base_bytes = bo.payload_bytes
        write_raw(args.builtin_out, hat, "auto", {"xi": xi, "base_bytes": base_bytes})
    if hat.n != p.n:
        raise DataError(f"particle counts differ: {p.n} vs {hat.n}")
    params = CorrectionParams(
        xi=xi, b=b, m=args.m, alpha=args.alpha, t_max=args.t_max, eps_loss=args.eps_loss,
        optimizer=args.optimizer,
    )
    codec_id = {"auto": None, "stored": codec.CODEC_STORED, "zstd": codec.CODEC_ZSTD}[args.codec]
    t0 = time.perf_counter()
    report = {"n": p.n, "xi": xi, "b": b, "m": args.m, "optimizer": args.optimizer, "ranks": args.ranks,
              "backend": kernels.BACKEND}
    if args.ranks == 1:
        out = correct_and_encode(p, hat, params, codec_id)
        dist = None
    else:
        out, dist = distributed_correct(p, hat, params, args.ranks, threads=_threads(args), codec_id=codec_id)
    elapsed = time.perf_counter() - t0
    Path(args.out).write_bytes(out.stream)
    res = out.result
    recon = out.reconstructed
    report.update({
        "vulnerable_pairs": len(out.pairs),
        "editable_particles": len(out.pairs.editable),
        "tight_pairs_initial": res.n_tight_initial,
        "initial_loss": res.initial_loss,
        "iterations": res.iterations,
        "iteration_budget": out.budget,
        "final_loss": res.final_loss,
        "converged": res.converged,
        "singular_pairs": res.n_singular,
        "n_edits": out.log.n_edits,
        "edit_bytes": len(out.stream),
        "edit_bpp": 8.0 * len(out.stream) / p.n if p.n else 0.0,
        "violated_pairs_after": int(violated_pairs(recon.positions(), out.pairs, b).sum()) if len(out.pairs) else 0,
        "max_error": float(np.max(np.abs(recon.positions() - p.positions()))) if p.n else 0.0,
        "seconds": elapsed,
    })
    if base_bytes is not None:
        report["base_bytes"] = base_bytes
        report["total_bpp"] = 8.0 * (base_bytes + len(out.stream)) / p.n if p.n else 0.0
    if dist is not None:
        report.update(dist.as_dict())
    emit(report)
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_reconstruct(args) -> int:
    hat = read_dataset(args.decomp)
    try:
        data = Path(args.edits).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {args.edits}: {exc}") from exc
    log = codec.decode(data)
    try:
        recon = codec.apply_edits(hat, log)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    in_dtype = "f32" if all(Path(f"{args.decomp}.{ax}.f32").exists() for ax in "xyz") else "f64"
    dtype = in_dtype if in_dtype == "f64" or narrowest_dtype(recon) == "f32" else "f64"
    write_raw(args.out, recon, dtype)
    emit({"n": recon.n, "n_edits": log.n_edits, "m": log.m, "xi": log.xi, "b": log.b, "dtype": dtype})
    return EXIT_OK


def cmd_verify(args) -> int:
    p = read_dataset(args.orig)
    q = read_dataset(args.recon)
    if p.n != q.n:
        raise DataError(f"particle counts differ: {p.n} vs {q.n}")
    b = _linking(args, p)
    report = {"n": p.n, "b": b}
    if args.xi is not None or args.xi_rel is not None:
        xi = _bound(args, p)
        v = find_vulnerable_pairs(p, b, xi)
        cnt = mcc_counts(v, p, q, b)
        nviol, worst = count_violations(p, q, xi)
        report.update({"xi": xi, "vulnerable_pairs": len(v), "tp": cnt.tp, "tn": cnt.tn, "fp": cnt.fp,
                       "fn": cnt.fn, "mcc": cnt.value(), "bound_violations": nviol})
    lab_p, lab_q = fof_components(p, b), fof_components(q, b)
    cat_p = halo_catalog(lab_p, args.min_size)
    cat_q = halo_catalog(lab_q, args.min_size)
    report.update({
        "labels_equal": lab_p == lab_q,
        "components_orig": lab_p.n_components,
        "components_recon": lab_q.n_components,
        "halos_orig": len(cat_p),
        "halos_recon": len(cat_q),
    })
    vol = p.bbox.volume
    if len(cat_p) and len(cat_q) and vol > 0:
        h_p = hmf(cat_p, vol, args.bins, args.particle_mass)
        h_q = hmf(cat_q, vol, args.bins, args.particle_mass)
        try:
            rel = hmf_rel_error(h_p, h_q)
            finite = rel[np.isfinite(rel)]
            report["hmf_max_rel_error"] = float(finite.max()) if len(finite) else float("nan")
            report["hmf_rel_error"] = rel
        except ValueError:
            report["hmf_max_rel_error"] = float("nan")
    if p.n:
        db, mse = psnr(p, q)
        report.update({"psnr_db": db, "mse": mse,
                       "max_error": float(np.max(np.abs(q.positions() - p.positions())))})
    total = 0
    if args.base_bytes is not None:
        total += args.base_bytes
    if args.edits is not None:
        total += Path(args.edits).stat().st_size
    if total and p.n:
        report["bpp"] = 8.0 * total / p.n
        report["ratio"] = 12.0 * p.n / total
    emit(report)
    return EXIT_OK


def cmd_report(args) -> int:
    if args.edits:
        data = Path(args.edits).read_bytes()
        log = codec.decode(data)
        emit({"bytes": len(data), "n": log.n, "m": log.m, "xi": log.xi, "b": log.b,
              "n_edits": log.n_edits, "flags_codec": log.codecs[0], "index_codec": log.codecs[1],
              "bpp": 8.0 * len(data) / log.n if log.n else 0.0})
    if args.data:
        p = read_dataset(args.data)
        rep = {"n": p.n, "bbox_lo": p.bbox.lo, "bbox_hi": p.bbox.hi, "volume": p.bbox.volume,
               "value_range": p.value_range()}
        if p.n and p.bbox.volume > 0:
            rep["b_eta_0.2"] = linking_length(0.2, p.bbox.volume, p.n)
        emit(rep)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cluster-guard", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--kind", choices=("uniform", "clustered"), default="clustered")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--blobs", type=int, default=8)
    g.add_argument("--sigma", type=float, default=0.02)
    g.add_argument("--background-fraction", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--box", type=float, default=1.0, help="edge of the output cube (powers of two stay exact)")
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_gen)

    bc = sub.add_parser("base-compress", help="run the built-in error-bounded quantiser")
    bc.add_argument("--input", required=True)
    bc.add_argument("--out", required=True)
    _add_bound(bc)
    bc.set_defaults(func=cmd_base_compress)

    c = sub.add_parser("correct", help="compute the edit log for a decompressed dataset")
    c.add_argument("--orig", required=True)
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--decomp", help="prefix of the decompressed dataset")
    src.add_argument("--builtin-out", help="run the built-in quantiser and write its output here")
    _add_bound(c)
    _add_linking(c)
    c.add_argument("--m", type=int, default=16, help="edit quantisation bit depth")
    c.add_argument("--ranks", type=int, default=1)
    c.add_argument("--optimizer", choices=("adam", "vanilla_pgd"), default="adam")
    c.add_argument("--alpha", type=float, default=1e-3)
    c.add_argument("--t-max", type=int, default=100_000)
    c.add_argument("--eps-loss", type=float, default=1e-10)
    c.add_argument("--codec", choices=("auto", "stored", "zstd"), default="auto")
    c.add_argument("--threads", type=int, default=0)
    c.add_argument("--out", required=True, help="edit log path")
    c.set_defaults(func=cmd_correct)

    r = sub.add_parser("reconstruct", help="apply an edit log to decompressed data")
    r.add_argument("--decomp", required=True)
    r.add_argument("--edits", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    v = sub.add_parser("verify", help="compare reconstructed data against the original")
    v.add_argument("--orig", required=True)
    v.add_argument("--recon", required=True)
    _add_linking(v)
    _add_bound(v, required=False)
    v.add_argument("--min-size", type=int, default=20)
    v.add_argument("--bins", type=int, default=50)
    v.add_argument("--particle-mass", type=float, default=1.0)
    v.add_argument("--base-bytes", type=int)
    v.add_argument("--edits")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="describe an edit log and/or a dataset")
    rp.add_argument("--edits")
    rp.add_argument("--data")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    for name in ("ranks", "t_max", "m", "threads", "n", "bins", "min_size"):
        val = getattr(args, name, None)
        if val is not None and val < 0:
            ap.error(f"--{name.replace('_', '-')} must be non-negative")
    if getattr(args, "ranks", 1) == 0:
        ap.error("--ranks must be >= 1")
    if args.command == "report" and not (args.edits or args.data):
        ap.error("report needs --edits and/or --data")
    try:
        return args.func(args)
    except (DataError, ParticleDataError, codec.EditLogError, BoundViolationError) as exc:
        print(f"cluster-guard: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cluster-guard: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"cluster-guard: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
