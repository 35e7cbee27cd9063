"""Wall-clock comparison of the two ETD2-PC backends against RK4 with implicit vertical mixing.

Each scheme runs the circular-flow box to t = 6000 s at its own step size
(dt = 3 for the exponential schemes, dt = 0.25 for RK4-IE). Results are
machine dependent; the interesting numbers are the ratios.
"""
import argparse
from pathlib import Path

from etdtracer.bench import BenchmarkTable, run_simulation
from etdtracer.scenario import load_scenario

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "circular.cfg", type=Path)
    ap.add_argument("--t-end", type=float, default=6000.0)
    ap.add_argument("--csv", type=Path, default=None)
    args = ap.parse_args()

    base = load_scenario(args.config)
    reports = []
    for scheme, dt in (("etd2-pc-ss", 3.0), ("etd2-pc-krylov", 3.0), ("rk4-ie", 0.25)):
        cfg = base.replace(scheme=scheme, dt=dt, steps=int(round(args.t_end / dt)))
        res = run_simulation(cfg)
        print(res.report.summary())
        reports.append(res.report)
    table = BenchmarkTable(reports)
    print()
    print(table.to_text())
    if args.csv:
        args.csv.write_text(table.to_csv())


if __name__ == "__main__":
    main()
