import numpy as np
import pytest
from hypothesis import given, strategies as st

from etdtracer.scenario import (
    ScenarioConfig,
    ScenarioError,
    build_mesh,
    build_state,
    circular_maxima,
    initial_tracers,
    load_scenario,
    velocity_circular,
)
from etdtracer.steppers import SchemeConfig
from etdtracer.tracer_system import assemble_rhs

MINIMAL = """
nx = 12
nz = 100
dt = 3
steps = 2000
scheme = etd2-pc-ss
"""


def test_minimal_scenario_is_the_benchmark_box():
    cfg = load_scenario(MINIMAL)
    assert (cfg.nx, cfg.nz, cfg.dt, cfg.steps) == (12, 100, 3.0, 2000)
    assert cfg.scheme.scheme == "etd2-pc-ss"
    assert cfg.dx == pytest.approx(10 / 12)
    assert cfg.dz == pytest.approx(0.1)
    assert (cfg.kappa_x, cfg.kappa_z) == (1e-4, 2.5e-5)
    assert cfg.scheme.phi_M == 4
    assert (cfg.scheme.krylov_m, cfg.scheme.krylov_m_inner) == (20, 10)
    assert (cfg.ic_left, cfg.ic_right, cfg.ic_split) == (5.0, 30.0, 5.0)


def test_scenario_from_file(tmp_path):
    path = tmp_path / "box.cfg"
    path.write_text("# comment line\n" + MINIMAL + "n_tracers = 3  # trailing comment\nphi_M = auto\n")
    cfg = load_scenario(path)
    assert cfg.n_tracers == 3
    assert cfg.scheme.phi_M is None
    assert load_scenario(str(path)) == cfg


def test_empty_scenario_lists_required_keys():
    with pytest.raises(ScenarioError, match="nx, nz, dt, steps, scheme"):
        load_scenario("")


def test_negative_dt_names_the_key():
    with pytest.raises(ScenarioError, match="'dt'"):
        load_scenario(MINIMAL.replace("dt = 3", "dt = -1"))


@pytest.mark.parametrize("text,pattern", [
    (MINIMAL + "colour = red\n", "line 7: unknown key 'colour'"),
    (MINIMAL + "nx = 4\n", "duplicate key 'nx'"),
    (MINIMAL + "just words\n", "line 7"),
    (MINIMAL.replace("nx = 12", "nx = twelve"), "line 2: cannot parse"),
    (MINIMAL.replace("etd2-pc-ss", "leapfrog"), "'scheme'"),
    (MINIMAL + "kappa_z = -1\n", "'kappa_z'"),
    (MINIMAL.replace("steps = 2000", "steps = 0"), "'steps'"),
    (MINIMAL + "velocity = custom-file\n", "'velocity_file'"),
])
def test_scenario_errors(text, pattern):
    with pytest.raises(ScenarioError, match=pattern):
        load_scenario(text)


def test_missing_scenario_file():
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario("/nonexistent/box.cfg")


def test_replace_routes_scheme_keys():
    cfg = load_scenario(MINIMAL)
    other = cfg.replace(scheme="rk4-ie", dt=0.25, steps=10, n_tracers=2)
    assert other.scheme == SchemeConfig("rk4-ie", 0.25, phi_M=4, krylov_m_inner=10)
    assert (other.dt, other.steps, other.n_tracers) == (0.25, 10, 2)


def test_dt_must_match_scheme():
    with pytest.raises(ScenarioError):
        ScenarioConfig(nx=2, nz=2, dt=1.0, steps=1, scheme=SchemeConfig(dt=2.0))


# ------------------------------------------------------------- velocity

def test_velocity_vanishes_at_center():
    u, w = velocity_circular(5.0, -5.0)
    assert u == pytest.approx(0.0, abs=1e-15) and w == pytest.approx(0.0, abs=1e-15)


def test_velocity_on_left_wall():
    z = np.linspace(-10, 0, 11)
    u, w = velocity_circular(np.zeros_like(z), z)
    np.testing.assert_allclose(u, 0.0, atol=1e-15)
    np.testing.assert_allclose(w, 0.8 * (1 - (z + 5) ** 2 / 25), atol=1e-15)


def test_velocity_maxima():
    assert circular_maxima() == pytest.approx((0.4, 0.8))
    x, z = np.meshgrid(np.linspace(0, 10, 1001), np.linspace(-10, 0, 1001))
    u, w = velocity_circular(x, z)
    assert np.abs(u).max() == pytest.approx(0.4, rel=1e-12)
    assert np.abs(w).max() == pytest.approx(0.8, rel=1e-12)
    iu = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    iw = np.unravel_index(np.argmax(np.abs(w)), w.shape)
    assert x[iu] == pytest.approx(5.0) and z[iu] in (0.0, -10.0)
    assert x[iw] in (0.0, 10.0) and z[iw] == pytest.approx(-5.0)


def test_velocity_out_of_domain():
    with pytest.raises(ValueError):
        velocity_circular(10.5, -1.0)
    with pytest.raises(ValueError):
        velocity_circular(1.0, 0.5)


@given(x=st.floats(0, 10), z=st.floats(-10, 0))
def test_velocity_is_divergence_free(x, z):
    eps = 1e-6
    du = (velocity_circular(min(x + eps, 10), z)[0] - velocity_circular(max(x - eps, 0), z)[0]) \
        / (min(x + eps, 10) - max(x - eps, 0))
    dw = (velocity_circular(x, min(z + eps, 0))[1] - velocity_circular(x, max(z - eps, -10))[1]) \
        / (min(z + eps, 0) - max(z - eps, -10))
    assert abs(du + dw) <= 1e-6


def test_discrete_flow_is_divergence_free_and_tangential():
    cfg = load_scenario(MINIMAL)
    state = build_state(cfg)
    mesh = state.mesh
    assert not state.u[:, mesh.boundary_edges].any()
    assert not state.w[-1].any()
    assert np.abs(state.w[0]).max() <= 1e-13
    # constant tracer stays constant
    assert np.abs(assemble_rhs(state, 3.0 * state.h)).max() <= 1e-13


def test_zero_and_custom_velocity(tmp_path):
    cfg = load_scenario(MINIMAL.replace("nx = 12", "nx = 3").replace("nz = 100", "nz = 4")
                        + "velocity = zero\n")
    state = build_state(cfg)
    assert not state.u.any() and not state.w.any()
    # exchange flow: the column-integrated transport through every edge vanishes
    u = np.zeros((4, 4))
    u[:2, 1:3] = 0.1
    u[2:, 1:3] = -0.1
    np.savez(tmp_path / "vel.npz", u=u)
    custom = cfg.replace(velocity="custom-file", velocity_file=str(tmp_path / "vel.npz"))
    state = build_state(custom)
    np.testing.assert_array_equal(state.u, u)
    assert np.abs(assemble_rhs(state, state.h)).max() <= 1e-14


def test_step_initial_condition():
    cfg = load_scenario(MINIMAL).replace(n_tracers=2)
    mesh = build_mesh(cfg)
    T = initial_tracers(cfg, mesh)
    assert T.shape == (100, 12, 2)
    left = mesh.x_cell < 5
    np.testing.assert_array_equal(T[:, left, 0], 5.0)
    np.testing.assert_array_equal(T[:, ~left, 0], 30.0)
    np.testing.assert_array_equal(T[:, :, 1], T[:, :, 0] + 1.0)
