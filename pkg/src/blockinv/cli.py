"""Command-line front end.

Exit codes: 0 success, 2 singular pivot, 3 I/O or format error,
4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import KINDS, bench as run_bench, fit_slope, generate, records_to_csv, write_csv
from .core import (
    OpCounters,
    gauss_jordan_oracle,
    load_matrix,
    residual_norm,
    save_matrix,
)
from .engine import resolve_workers, run_inversion, total_steps
from .errors import (
    AllPivotsSingular,
    BlockInvError,
    CheckpointCorrupt,
    FormatError,
    InvalidOrder,
    SchemeMismatch,
    SingularBlock,
    SingularMatrix,
)
from .partition import make_partition, partition_from_sizes
from .recursive import (
    invertor_by_a,
    invertor_by_ad,
    invertor_inplace_by_a,
    invertor_with_fallback,
)

EXIT_OK = 0
EXIT_SINGULAR = 2
EXIT_IO = 3
EXIT_CHECKPOINT = 4


def _parse_sizes(text):
    return [int(s) for s in text.split(",") if s]


def _parse_orders(text):
    """Either 'a,b,c' or 'lo:hi:step'."""
    if ":" in text:
        lo, hi, step = (int(v) for v in text.split(":"))
        return list(range(lo, hi + 1, step))
    return [int(v) for v in text.split(",") if v]


def _scheme_for(order, sizes):
    return partition_from_sizes(sizes) if sizes else make_partition(order)


def _invert_with_method(m, method, workers, sizes, checkpoint_dir, file_backed, retry):
    counters = OpCounters()
    try:
        if method == "a":
            inv, _ = invertor_by_a(m, counters)
        elif method == "inplace":
            inv = m.copy()
            invertor_inplace_by_a(inv, counters=counters)
        elif method == "ad":
            inv, _ = invertor_by_ad(m, counters)
        elif method == "oracle":
            inv = gauss_jordan_oracle(m, counters)
        else:
            block = run_inversion(
                m,
                workers=workers,
                sizes=sizes,
                checkpoint_dir=checkpoint_dir,
                file_backed=file_backed,
                counters=counters,
            )
            inv = block.to_dense()
    except SingularBlock:
        if not retry or method not in ("a", "inplace", "ad"):
            raise
        counters = OpCounters()
        inv, _ = invertor_with_fallback(m, counters)
    return inv, counters


def cmd_gen(args):
    m = generate(args.order, seed=args.seed, kind=args.kind)
    save_matrix(m, args.out, binary=args.binary)
    print(f"wrote {args.kind} matrix of order {args.order} to {args.out}")
    return EXIT_OK


def cmd_partition(args):
    scheme = _scheme_for(args.order, args.sizes)
    print(f"order {scheme.m_n}: N_k = {scheme.n_blocks} diagonal blocks, "
          f"{total_steps(scheme.n_blocks)} steps")
    print("sizes " + " ".join(str(s) for s in scheme.sizes))
    return EXIT_OK


def cmd_invert(args):
    m = load_matrix(args.infile, binary=args.binary or None)
    workers = resolve_workers(args.workers)
    inv, counters = _invert_with_method(
        m, args.method, workers, args.sizes, args.checkpoint_dir, args.file_backed,
        args.retry,
    )
    res = residual_norm(m, inv)
    if args.out:
        save_matrix(inv, args.out, binary=args.binary)
    print(f"method {args.method}  order {m.shape[0]}  workers {workers}")
    print(f"residual {res:.3e}")
    print(f"multiplies {counters.multiplies}  inversions {counters.inversions}  "
          f"reductions {counters.reductions}  peak_scratch {counters.peak_scratch}")
    return EXIT_OK


def cmd_verify(args):
    m = load_matrix(args.infile, binary=args.binary or None)
    if args.inverse:
        inv = load_matrix(args.inverse, binary=args.binary or None)
        res = residual_norm(m, inv)
        print(f"residual {res:.3e}")
        return EXIT_OK
    workers = resolve_workers(args.workers)
    inv, _ = _invert_with_method(m, args.method, workers, args.sizes, None, False, False)
    oracle = gauss_jordan_oracle(m)
    res = residual_norm(m, inv)
    diff = float(np.max(np.abs(inv - oracle)))
    budget = 1e-8 * m.shape[0]
    print(f"method {args.method}  residual {res:.3e}  max|diff vs oracle| {diff:.3e}")
    if res > budget or diff > budget:
        print(f"FAIL: exceeds budget {budget:.3e}")
        return EXIT_SINGULAR
    print("OK")
    return EXIT_OK


def cmd_bench(args):
    records = run_bench(
        args.methods.split(","),
        _parse_orders(args.orders),
        workers_list=[int(w) for w in args.workers.split(",")],
        repeats=args.repeats,
        seed=args.seed,
    )
    if args.csv:
        write_csv(records, args.csv)
        print(f"wrote {len(records)} rows to {args.csv}")
    else:
        sys.stdout.write(records_to_csv(records))
    if args.fit:
        lo, hi = (float(v) for v in args.fit.split(":"))
        for method in args.methods.split(","):
            rows = [r for r in records if r.method == method and r.kind == "sample"]
            fit = fit_slope(rows, lo, hi)
            print(f"{method}: T ~ m^n with n = {fit.exponent:.3f} +- {fit.stderr:.3f} "
                  f"({fit.n_points} points, m in [{lo:g}, {hi:g}])")
    return EXIT_OK


def cmd_resume(args):
    m = load_matrix(args.infile, binary=args.binary or None)
    block = run_inversion(
        m,
        workers=resolve_workers(args.workers),
        sizes=args.sizes,
        checkpoint_dir=args.checkpoint_dir,
        file_backed=args.file_backed,
    )
    inv = block.to_dense()
    if args.out:
        save_matrix(inv, args.out, binary=args.binary)
    print(f"resumed run complete; residual {residual_norm(m, inv):.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockinv", description="Blockwise dense-matrix inversion toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a test matrix")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=KINDS, default="well-conditioned")
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("partition", help="show the diagonal blocking of an order")
    p.add_argument("order", type=int)
    p.add_argument("--sizes", type=_parse_sizes, default=None)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("invert", help="invert a matrix file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--method", choices=("a", "inplace", "ad", "parallel", "oracle"),
                   default="parallel")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--sizes", type=_parse_sizes, default=None)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--file-backed", action="store_true")
    p.add_argument("--retry", action="store_true",
                   help="on a singular pivot, retry with per-node pivot fallback")
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_invert)

    p = sub.add_parser("verify", help="check an inversion against the oracle")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--inverse", default=None, help="verify this inverse file instead")
    p.add_argument("--method", choices=("a", "inplace", "ad", "parallel", "oracle"),
                   default="parallel")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--sizes", type=_parse_sizes, default=None)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="timing sweep with CSV output")
    p.add_argument("--methods", default="a,inplace,ad")
    p.add_argument("--orders", required=True, help="'a,b,c' or 'lo:hi:step'")
    p.add_argument("--workers", default="1")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.add_argument("--fit", default=None, help="'lo:hi' slope-fit range")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("resume", help="continue a checkpointed run to completion")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--sizes", type=_parse_sizes, default=None)
    p.add_argument("--file-backed", action="store_true")
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_resume)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SingularBlock, SingularMatrix, AllPivotsSingular) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (CheckpointCorrupt, SchemeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FormatError, InvalidOrder, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BlockInvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
