"""Command line entry point: ``run``, ``bench`` and ``phi-selftest``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import StabilityError, run_benchmark_suite, run_simulation
from .scenario import ScenarioError, load_scenario
from .selftest import phi_selftest


def _parse_list(text, kind=str):
    return [kind(p.strip()) for p in text.split(",") if p.strip()]


def _apply_overrides(cfg, args):
    changes = {}
    if args.output_dir is not None:
        changes["output_dir"] = str(args.output_dir)
    if args.snapshot_every is not None:
        changes["snapshot_every"] = args.snapshot_every
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_scenario(Path(args.config)), args)
    try:
        res = run_simulation(cfg)
    except StabilityError as exc:
        print(exc)
        return 2
    c = res.cfl
    print(res.report.summary())
    print(f"CFL_x {c['cfl_x']:.4f}  CFL_z {c['cfl_z']:.4f}  ratio {c['ratio']:.3f} "
          f"(grid-point maxima: ratio {c['ratio_discrete']:.3f})")
    print(f"T range over the run [{res.running_min:.6g}, {res.running_max:.6g}], "
          f"final [{res.fields.min():.6g}, {res.fields.max():.6g}]")
    print(f"relative mass drift {res.mass_drift.max():.3e}")
    if cfg.output_dir:
        print(f"fields written to {cfg.output_dir}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _apply_overrides(load_scenario(Path(args.config)), args)
    schemes = _parse_list(args.schemes)
    counts = _parse_list(args.tracers, int)
    try:
        table = run_benchmark_suite(cfg, schemes, counts, output_dir=args.output_dir)
    except StabilityError as exc:
        print(exc)
        return 2
    print(table.to_text())
    if args.output_dir is not None:
        print(f"\ntable written to {Path(args.output_dir) / 'benchmark.csv'}")
    else:
        print()
        print(table.to_csv(), end="")
    return 0


def _cmd_selftest(args) -> int:
    results = phi_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etdtracer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log step diagnostics")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario file (key = value lines)")
        sp.add_argument("--output-dir", type=Path, default=None)
        sp.add_argument("--snapshot-every", type=int, default=None, metavar="N")
        sp.add_argument("--steps", type=int, default=None, help="override the step count")

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.set_defaults(func=_cmd_run)
    b = sub.add_parser("bench", help="time schemes against tracer counts")
    common(b)
    b.add_argument("--schemes", default="etd2-pc-ss,etd2-pc-krylov")
    b.add_argument("--tracers", default="1,2,4,6")
    b.set_defaults(func=_cmd_bench)
    s = sub.add_parser("phi-selftest", help="check the phi-function machinery")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
