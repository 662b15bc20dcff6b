"""Command-line entry point: ``ldas analytical|mechanism|bench``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time

from .analytical import run_analytical
from .bench import DEFAULT_SIZES, HEADER, BenchConfig, run_bench
from .fem import export_density
from .mma import run
from .responses import EXPECTED_SOLVES, MODES, ProblemDefinition

RECORD_HEADER = ("iteration", "objective", "max_violation", "backend_solves", "reconstructions",
                 "prep_s", "solve_s", "wall_s", "change", "kkt_residual", "flags")


def parse_mesh(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"mesh must look like 40x40, got {text!r}") from None
    if nx < 4 or ny < 4:
        raise argparse.ArgumentTypeError("mesh must be at least 4x4")
    return nx, ny


def parse_sizes(text: str) -> tuple[int, ...]:
    sizes = tuple(int(v) for v in text.split(",") if v)
    if not sizes or min(sizes) < 4:
        raise argparse.ArgumentTypeError("sizes must be a comma list of integers >= 4")
    return sizes


def _backend(name: str) -> str:
    return "iterative" if name == "cg" else name


def cmd_analytical(args) -> int:
    report = run_analytical(exact=args.exact, tol=args.tol)
    print("\n".join(report.lines()))
    return 0 if report.ok else 1


def cmd_mechanism(args) -> int:
    nx, ny = args.mesh
    problem = ProblemDefinition.default(nx, ny)
    expected = EXPECTED_SOLVES[args.mode]
    failures = []
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(RECORD_HEADER)
        resp_rows = []

        def emit(rec):
            led = rec.ledger
            writer.writerow([rec.iteration, f"{rec.objective:.10g}", f"{rec.max_violation:.6g}",
                             led.backend_solves, led.reconstructions, f"{led.preprocess_seconds:.6g}",
                             f"{led.solve_seconds:.6g}", f"{rec.wall_time:.6g}", f"{rec.change:.6g}",
                             f"{rec.kkt_residual:.3g}", "|".join(rec.flags)])
            out.flush()
            resp_rows.extend((rec.iteration, lab, val) for lab, val in zip(rec.labels, rec.values))
            if led.backend_solves != expected:
                failures.append(f"iteration {rec.iteration}: {led.backend_solves} solves, expected {expected}")
            if not led.balanced:
                failures.append(f"iteration {rec.iteration}: ledger does not balance")

        t0 = time.perf_counter()
        records = run(problem, args.mode, args.iters, args.tol_change, _backend(args.backend),
                      tol=args.tol, workers=args.workers, callback=emit)
        elapsed = time.perf_counter() - t0
    finally:
        if out is not sys.stdout:
            out.close()
    if args.responses_out:
        with open(args.responses_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "response", "value"))
            w.writerows((i, lab, f"{v:.10g}") for i, lab, v in resp_rows)
    if args.density_out:
        export_density(args.density_out, records[-1].design, nx, ny)
    info = sys.stderr if out is sys.stdout else sys.stdout
    print(f"{'iteration':>9} {'solves':>6} {'reconstructed':>13}", file=info)
    for rec in records:
        print(f"{rec.iteration:>9} {rec.ledger.backend_solves:>6} {rec.ledger.reconstructions:>13}", file=info)
    total = sum(r.ledger.backend_solves for r in records)
    print(f"mode {args.mode}, backend {args.backend}: {total} backend solves over {len(records)} "
          f"iterations in {elapsed:.2f} s", file=info)
    for f in failures:
        print(f"FAIL: {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_bench(args) -> int:
    backends = ("direct", "cg") if args.backend == "both" else (args.backend,)
    config = BenchConfig(sizes=args.sizes, backends=tuple(_backend(b) for b in backends),
                         modes=tuple(args.modes), repeats=args.repeats, out=args.out, tol=args.tol,
                         workers=args.workers)
    rows = run_bench(config)
    if not args.out:
        writer = csv.writer(sys.stdout)
        writer.writerow(HEADER)
        for r in rows:
            writer.writerow(r.csv_row())
    flagged = [r for r in rows if r.flagged]
    for r in flagged:
        print(f"WARNING: timing anomaly at n={r.n} mode={r.mode} backend={r.backend}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytical", help="two-DOF spring example")
    p.add_argument("--exact", action="store_true", help="exact rational arithmetic")
    p.add_argument("--tol", type=float, default=None, help="dependency tolerance (default 1e-6, 0 if exact)")
    p.set_defaults(func=cmd_analytical)

    p = sub.add_parser("mechanism", help="optimize the two-input compliant mechanism")
    p.add_argument("--mesh", type=parse_mesh, default=(40, 40), help="elements, e.g. 40x40")
    p.add_argument("--mode", choices=MODES, default="ldas")
    p.add_argument("--backend", choices=("direct", "cg"), default="direct")
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--tol", type=float, default=1e-6, help="dependency tolerance")
    p.add_argument("--tol-change", type=float, default=0.0,
                   help="stop when the max design change drops below this (default: run --iters)")
    p.add_argument("--out", help="iteration CSV (default stdout)")
    p.add_argument("--responses-out", help="long-format CSV of every response value per iteration")
    p.add_argument("--density-out", help="final density in grid text format")
    p.add_argument("--workers", type=int, default=1, help="threads for independent forward solves")
    p.set_defaults(func=cmd_mechanism)

    p = sub.add_parser("bench", help="normalized run-time sweep")
    p.add_argument("--sizes", type=parse_sizes, default=DEFAULT_SIZES,
                   help="elements per side, comma separated (default 20,40,80,160)")
    p.add_argument("--mesh", type=parse_mesh, help="single square mesh, overrides --sizes")
    p.add_argument("--backend", choices=("direct", "cg", "both"), default="both")
    p.add_argument("--mode", dest="modes", action="append", choices=MODES,
                   help="repeatable; default all modes")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-6, help="dependency tolerance")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--workers", type=int, default=1,
                   help="threads for independent solves; >1 skews comparisons")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "mesh", None) and args.command == "bench":
        nx, ny = args.mesh
        if nx != ny:
            parser.error("bench meshes are square")
        args.sizes = (nx,)
    if args.command == "bench" and not args.modes:
        args.modes = list(MODES)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
