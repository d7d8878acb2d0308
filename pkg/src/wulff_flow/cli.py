"""``wulff-flow`` command line entry point."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, WulffFlowError
from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _float_list(s):
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="wulff-flow",
                                description="Anisotropic mean curvature flow of closed surfaces.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="single run: energy log, snapshots, diagnostics")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--dump-matrices", action="store_true",
                   help="write the initial mass and stiffness matrices in MatrixMarket format")

    s = sub.add_parser("converge-space", help="spatial EOC study")
    s.add_argument("config")
    s.add_argument("--levels", type=_int_list, default=[2, 3, 4])
    s.add_argument("--tau", type=float, default=1e-4)
    s.add_argument("--out")

    t = sub.add_parser("converge-time", help="temporal EOC study")
    t.add_argument("config")
    t.add_argument("--taus", type=_float_list, default=[4e-3, 2e-3, 1e-3])
    t.add_argument("--level", type=int, default=4)
    t.add_argument("--out")

    w = sub.add_parser("wulff", help="export Frank diagram and Wulff shape as OBJ")
    w.add_argument("--density", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--grid", type=int, default=16, help="geodesic grid frequency")
    w.add_argument("--dual-grid", type=int, default=32, help="search grid for the dual density")

    c = sub.add_parser("compare-stabilization", help="rerun a config with and without stabilisation")
    c.add_argument("config")
    c.add_argument("--out")
    return p


def _print_rows(rows):
    for r in rows:
        rates = " ".join(f"{k}={v:.3f}" for k, v in r.eoc.items() if k.endswith("H1"))
        status = "ok" if r.completed else "aborted"
        print(f"{r.label:>10}  h={r.h:.4e}  tau={r.tau:.1e}  X_H1={r.maxima['X_H1']:.4e}  "
              f"{status}  {rates}  {r.note}".rstrip())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "wulff":
            harness.cmd_wulff(args.density, args.out, args.grid, args.dual_grid)
            print(f"wrote {args.out}/frank.obj and {args.out}/wulff.obj")
            return EXIT_OK
        cfg = harness.load_config(args.config)
        if args.command == "run":
            if args.dump_matrices:
                cfg = cfg.replace(dump_matrices=True)
            o = harness.cmd_run(cfg, args.out)
            log = o.result.log
            print(f"steps={log[-1].step} t={log[-1].time:.6g} energy {log[0].energy:.10g} -> "
                  f"{log[-1].energy:.10g}  wall={o.wall_time:.1f}s")
            if not o.completed:
                print(f"run aborted: {o.result.error}", file=sys.stderr)
                return EXIT_RUNTIME
        elif args.command == "converge-space":
            _print_rows(harness.cmd_converge_space(cfg, args.levels, args.tau, args.out or cfg.output))
        elif args.command == "converge-time":
            _print_rows(harness.cmd_converge_time(cfg, args.taus, args.level, args.out or cfg.output))
        elif args.command == "compare-stabilization":
            outs = harness.cmd_compare_stabilization(cfg, args.out)
            failed = False
            for name, o in outs.items():
                print(f"{name}: completed={o.completed} steps={o.result.log[-1].step} "
                      f"final energy={o.result.log[-1].energy:.10g}")
                failed |= not o.completed
            return EXIT_RUNTIME if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WulffFlowError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
