import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from etdtracer.scenario import ScenarioConfig, build_mesh, build_state, initial_tracers
from etdtracer.steppers import SchemeConfig, Stepper

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}
# wall-clock seconds spent in expensive session fixtures
FIXTURE_SECONDS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def circular_config(scheme="etd2-pc-ss", dt=3.0, steps=2000, **kw):
    """The 12 x 100 circular-flow box with the default diffusivities."""
    scheme_kw = {k: kw.pop(k) for k in list(kw) if k in SchemeConfig.__dataclass_fields__}
    scheme_kw.setdefault("phi_M", 4)
    scheme_kw.setdefault("krylov_m", 20)
    scheme_kw.setdefault("krylov_m_inner", 10)
    return ScenarioConfig(nx=12, nz=100, dt=dt, steps=steps,
                          scheme=SchemeConfig(scheme=scheme, dt=dt, **scheme_kw), **kw)


@pytest.fixture(scope="session")
def circular():
    """(config, mesh, state, ht0) of the circular-flow box at dt = 3."""
    cfg = circular_config()
    mesh = build_mesh(cfg)
    state = build_state(cfg, mesh)
    T0 = initial_tracers(cfg, mesh)[:, :, 0]
    return cfg, mesh, state, T0 * state.h


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def advance(state, ht, config, steps):
    stepper = Stepper(state, config)
    for n in range(steps):
        ht = stepper.step(ht, n)
    return ht


# order study on the circular box: errors at t = 15 s against a dt = 0.01 run
ORDER_T_END = 15.0
ORDER_REF_DT = 0.01


@pytest.fixture(scope="session")
def order_reference(circular):
    _, _, state, ht0 = circular
    cfg = SchemeConfig("etd2-pc-ss", ORDER_REF_DT)
    t0 = time.perf_counter()
    ref = advance(state, ht0, cfg, int(round(ORDER_T_END / ORDER_REF_DT))) / state.h
    FIXTURE_SECONDS["order_reference"] = time.perf_counter() - t0
    return ref


def order_errors(circular, reference, scheme, dts):
    _, _, state, ht0 = circular
    errs = []
    for dt in dts:
        T = advance(state, ht0, SchemeConfig(scheme, dt), int(round(ORDER_T_END / dt))) / state.h
        errs.append(float(np.abs(T - reference).max()))
    return np.array(errs)


def fitted_slope(dts, errs):
    """Least-squares slope of log(error) against log(dt)."""
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
