"""Total and per-tracer cost as the number of tracers grows.

The phi blocks (or Krylov bases) are built once per step and shared by
every tracer, so the per-tracer cost should fall as tracers are added.
"""
import argparse
from pathlib import Path

from etdtracer.bench import run_benchmark_suite
from etdtracer.scenario import load_scenario

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "circular.cfg", type=Path)
    ap.add_argument("--schemes", default="etd2-pc-ss,etd2-pc-krylov")
    ap.add_argument("--tracers", default="1,2,4,6")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--output-dir", type=Path, default=None)
    args = ap.parse_args()

    base = load_scenario(args.config)
    if args.steps:
        base = base.replace(steps=args.steps)
    table = run_benchmark_suite(base, args.schemes.split(","),
                                [int(c) for c in args.tracers.split(",")],
                                output_dir=args.output_dir)
    print(table.to_text())


if __name__ == "__main__":
    main()
