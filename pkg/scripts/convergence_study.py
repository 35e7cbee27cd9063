"""Self-convergence of every scheme on the circular-flow box.

Errors at t_end are measured in the max norm against a fine ETD2-PC run
and the observed order is the least-squares slope in log-log space.
"""
import argparse

import numpy as np

from etdtracer.scenario import ScenarioConfig, build_mesh, build_state, initial_tracers
from etdtracer.steppers import SchemeConfig, Stepper

DEFAULT_DTS = {
    "etd1": [1.5, 0.75, 0.375],
    "etd2-rk": [1.5, 0.75, 0.375],
    "etd2-pc-ss": [1.5, 0.75, 0.375],
    "etd2-pc-krylov": [1.5, 0.75, 0.375],
    "rk4-ie": [0.2, 0.1, 0.05],
}


def integrate(state, ht, scheme, dt, t_end):
    stepper = Stepper(state, SchemeConfig(scheme, dt, krylov_m=20, krylov_m_inner=10))
    for n in range(int(round(t_end / dt))):
        ht = stepper.step(ht, n)
    return ht / state.h


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-end", type=float, default=15.0)
    ap.add_argument("--ref-dt", type=float, default=0.01)
    args = ap.parse_args()

    cfg = ScenarioConfig(nx=12, nz=100, dt=3.0, steps=1, scheme=SchemeConfig(dt=3.0))
    mesh = build_mesh(cfg)
    state = build_state(cfg, mesh)
    ht0 = initial_tracers(cfg, mesh)[:, :, 0] * state.h
    ref = integrate(state, ht0, "etd2-pc-ss", args.ref_dt, args.t_end)

    for scheme, dts in DEFAULT_DTS.items():
        errs = [np.abs(integrate(state, ht0, scheme, dt, args.t_end) - ref).max() for dt in dts]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        cells = "  ".join(f"dt={dt:<6g} err={e:.3e}" for dt, e in zip(dts, errs))
        print(f"{scheme:<16} order {slope:5.2f}   {cells}")


if __name__ == "__main__":
    main()
