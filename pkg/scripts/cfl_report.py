"""Print the horizontal and vertical CFL numbers of a scenario."""
import argparse
from pathlib import Path

from etdtracer.bench import cfl_report
from etdtracer.scenario import load_scenario

ROOT = Path(__file__).resolve().parent.parent

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--config", default=ROOT / "configs" / "circular.cfg", type=Path)
cfg = load_scenario(ap.parse_args().config)
c = cfl_report(cfg)
print(f"dt = {cfg.dt:g}, dx = {cfg.dx:.4g}, dz = {cfg.dz:.4g}")
print(f"CFL_x = {c['cfl_x']:.4f}  CFL_z = {c['cfl_z']:.4f}  ratio = {c['ratio']:.3f}")
print(f"sampled on the staggered grid: CFL_x = {c['cfl_x_discrete']:.4f}  "
      f"CFL_z = {c['cfl_z_discrete']:.4f}  ratio = {c['ratio_discrete']:.3f}")
