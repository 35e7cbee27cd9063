"""
Scenario configuration: the flat ``key = value`` file format, the analytic
circular velocity field and construction of mesh, state and initial data.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .fieldio import read_field_csv
from .mesh_ops import Mesh2D, compute_vertical_transport, line_mesh
from .steppers import SCHEMES, SchemeConfig
from .tracer_system import Discretization, TracerState

__all__ = [
    "ScenarioConfig",
    "ScenarioError",
    "load_scenario",
    "velocity_circular",
    "circular_maxima",
    "build_mesh",
    "build_velocity",
    "build_state",
    "initial_tracers",
]


class ScenarioError(ValueError):
    """Bad scenario input; the message names the line or the key."""


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation: grid, physics, scheme, initial data and output controls.

    Defaults reproduce the circular-flow benchmark box (10 m x 10 m,
    kappa_x = 1e-4, kappa_z = 2.5e-5, phi scaling exponent 4, Krylov
    dimension 20 near the walls and 10 in the middle).
    """

    nx: int
    nz: int
    dt: float
    steps: int
    scheme: SchemeConfig
    x_max: float = 10.0
    z_min: float = -10.0
    kappa_x: float = 1e-4
    kappa_z: float = 2.5e-5
    n_tracers: int = 1
    velocity: str = "circular"
    velocity_file: Optional[str] = None
    initial_condition: str = "step-x"
    ic_left: float = 5.0
    ic_right: float = 30.0
    ic_split: float = 5.0
    ic_file: Optional[str] = None
    tracer_offset: float = 1.0
    horizontal_order: int = 1
    vertical_advection: str = "upwind"
    snapshot_every: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        for key in ("nx", "nz", "steps", "n_tracers"):
            if getattr(self, key) < 1:
                raise ScenarioError(f"invalid value for '{key}': must be >= 1")
        if not self.dt > 0:
            raise ScenarioError("invalid value for 'dt': must be > 0")
        if self.dt != self.scheme.dt:
            raise ScenarioError("invalid value for 'dt': differs from the scheme time step")
        for key in ("kappa_x", "kappa_z"):
            if getattr(self, key) < 0:
                raise ScenarioError(f"invalid value for '{key}': must be >= 0")
        if not self.x_max > 0:
            raise ScenarioError("invalid value for 'x_max': must be > 0")
        if not self.z_min < 0:
            raise ScenarioError("invalid value for 'z_min': must be < 0")
        if self.velocity not in ("circular", "zero", "custom-file"):
            raise ScenarioError("invalid value for 'velocity': use circular, zero or custom-file")
        if self.velocity == "custom-file" and not self.velocity_file:
            raise ScenarioError("invalid value for 'velocity_file': required for custom-file velocity")
        if self.initial_condition not in ("step-x", "custom-file"):
            raise ScenarioError("invalid value for 'initial_condition': use step-x or custom-file")
        if self.initial_condition == "custom-file" and not self.ic_file:
            raise ScenarioError("invalid value for 'ic_file': required for custom-file initial data")
        if self.snapshot_every < 0:
            raise ScenarioError("invalid value for 'snapshot_every': must be >= 0")
        try:
            Discretization(self.horizontal_order, self.vertical_advection)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def dz(self) -> float:
        return -self.z_min / self.nz

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with changes; ``dt`` and scheme-level keys are routed to the scheme too."""
        scheme_keys = {f.name for f in dataclasses.fields(SchemeConfig)}
        scheme_changes = {k: changes.pop(k) for k in list(changes) if k in scheme_keys and k != "dt"}
        if "dt" in changes:
            scheme_changes["dt"] = changes["dt"]
        scheme = dataclasses.replace(self.scheme, **scheme_changes) if scheme_changes else self.scheme
        return dataclasses.replace(self, scheme=scheme, **changes)


# --------------------------------------------------------------------------
# file format

def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.lower() in ("auto", "none") else int(text)


def _opt_str(text: str):
    return None if text.lower() in ("none", "") else text


# key -> (parser, default); REQUIRED marks keys without a default
REQUIRED = object()
_SCENARIO_KEYS = {
    "nx": (int, REQUIRED),
    "nz": (int, REQUIRED),
    "dt": (float, REQUIRED),
    "steps": (int, REQUIRED),
    "scheme": (str, REQUIRED),
    "x_max": (float, 10.0),
    "z_min": (float, -10.0),
    "kappa_x": (float, 1e-4),
    "kappa_z": (float, 2.5e-5),
    "n_tracers": (int, 1),
    "velocity": (str, "circular"),
    "velocity_file": (_opt_str, None),
    "initial_condition": (str, "step-x"),
    "ic_left": (float, 5.0),
    "ic_right": (float, 30.0),
    "ic_split": (float, 5.0),
    "ic_file": (_opt_str, None),
    "tracer_offset": (float, 1.0),
    "horizontal_order": (int, 1),
    "vertical_advection": (str, "upwind"),
    "snapshot_every": (int, 0),
    "output_dir": (_opt_str, None),
}
_SCHEME_KEYS = {
    "phi_M": (_opt_int, 4),
    "phi_r": (int, 12),
    "phi_variant": (str, "simple"),
    "backend": (_opt_str, None),
    "krylov_m": (int, 20),
    "krylov_m_inner": (_opt_int, 10),
    "krylov_outer_columns": (int, 3),
    "krylov_tol": (float, 1e-8),
    "krylov_max_cycles": (int, 10),
    "reuse_phi_across_tracers": (_bool, True),
    "reuse_phi_across_stages": (_bool, True),
    "fixed_jacobian": (_bool, False),
}
KNOWN_KEYS = tuple(_SCENARIO_KEYS) + tuple(_SCHEME_KEYS)


def _read_source(source) -> str:
    if isinstance(source, Path):
        return source.read_text()
    text = str(source)
    if text.strip() and "\n" not in text and "=" not in text:
        path = Path(text)
        if not path.is_file():
            raise ScenarioError(f"scenario file not found: {text}")
        return path.read_text()
    return text


def load_scenario(source) -> ScenarioConfig:
    """Parse a scenario from a path or from the text itself.

    One ``key = value`` per line; ``#`` starts a comment; blank lines are
    ignored. ``nx``, ``nz``, ``dt``, ``steps`` and ``scheme`` are required;
    every other key has the default listed in ``_SCENARIO_KEYS`` /
    ``_SCHEME_KEYS``. ``phi_M = auto`` chooses the scaling exponent per block.
    """
    text = _read_source(source)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCENARIO_KEYS and key not in _SCHEME_KEYS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        parser = (_SCENARIO_KEYS.get(key) or _SCHEME_KEYS[key])[0]
        try:
            values[key] = parser(value)
        except ValueError:
            raise ScenarioError(f"line {lineno}: cannot parse {value!r} for key {key!r}") from None
    missing = [k for k, (_, d) in _SCENARIO_KEYS.items() if d is REQUIRED and k not in values]
    if missing:
        raise ScenarioError("missing required keys: " + ", ".join(missing))
    scheme_name = values.pop("scheme").lower()
    if scheme_name not in SCHEMES:
        raise ScenarioError(f"invalid value for 'scheme': {scheme_name!r} (choose from {', '.join(SCHEMES)})")
    if not values["dt"] > 0:
        raise ScenarioError("invalid value for 'dt': must be > 0")
    scheme_kw = {k: values.pop(k, d) for k, (_, d) in _SCHEME_KEYS.items()}
    try:
        scheme = SchemeConfig(scheme=scheme_name, dt=values["dt"], **scheme_kw)
    except ValueError as exc:
        raise ScenarioError(f"invalid scheme settings: {exc}") from None
    kw = {k: values.get(k, d) for k, (_, d) in _SCENARIO_KEYS.items() if k != "scheme"}
    return ScenarioConfig(scheme=scheme, **kw)


# --------------------------------------------------------------------------
# circular flow

def _psi1(x, x_max):
    a = 0.5 * x_max
    return 1.0 - (x - a) ** 4 / a ** 4


def _dpsi1(x, x_max):
    a = 0.5 * x_max
    return -4.0 * (x - a) ** 3 / a ** 4


def _psi2(z, z_min):
    b = 0.5 * z_min
    return 1.0 - (z - b) ** 2 / b ** 2


def _dpsi2(z, z_min):
    b = 0.5 * z_min
    return -2.0 * (z - b) / b ** 2


def velocity_circular(x, z, x_max: float = 10.0, z_min: float = -10.0):
    """(u, w) = (-psi1(x) psi2'(z), psi1'(x) psi2(z)) at the given points.

    psi1(x) = 1 - (x - x_max/2)^4 / (x_max/2)^4,
    psi2(z) = 1 - (z - z_min/2)^2 / (z_min/2)^2.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    eps = 1e-12 * max(abs(x_max), abs(z_min))
    if np.any(x < -eps) or np.any(x > x_max + eps):
        raise ValueError(f"x outside [0, {x_max}]")
    if np.any(z < z_min - eps) or np.any(z > eps):
        raise ValueError(f"z outside [{z_min}, 0]")
    u = -_psi1(x, x_max) * _dpsi2(z, z_min)
    w = _dpsi1(x, x_max) * _psi2(z, z_min)
    return u, w


def circular_maxima(x_max: float = 10.0, z_min: float = -10.0):
    """Exact max|u| and max|w| of the circular field over the box."""
    # |psi2'| peaks at the surface/bottom, |psi1'| at the walls; both other factors peak at 1
    return abs(_dpsi2(0.0, z_min)), abs(_dpsi1(0.0, x_max))


# --------------------------------------------------------------------------
# construction

def build_mesh(cfg: ScenarioConfig) -> Mesh2D:
    return line_mesh(cfg.nx, cfg.nz, cfg.x_max, cfg.z_min)


def build_velocity(cfg: ScenarioConfig, mesh: Mesh2D):
    """u on edges (layer mid-depth) and the cross-interface transport w.

    For the circular field u is sampled at the edges and w follows from
    the thickness equation at rest thickness; that equals the analytic w
    averaged over each cell face, so the discrete field is divergence free.
    """
    h = np.broadcast_to(mesh.dz_rest[:, None], (mesh.nz, mesh.nx)).copy()
    if cfg.velocity == "zero":
        return np.zeros((mesh.nz, mesh.n_edges)), np.zeros((mesh.nz + 1, mesh.nx))
    if cfg.velocity == "circular":
        u, _ = velocity_circular(mesh.x_edge[None, :], mesh.z_cell[:, None], cfg.x_max, cfg.z_min)
    else:
        try:
            with np.load(cfg.velocity_file) as data:
                u = np.array(data["u"], dtype=float)
                if "w" in data:
                    return u, np.array(data["w"], dtype=float)
        except OSError as exc:
            raise ScenarioError(f"cannot read velocity file {cfg.velocity_file}: {exc}") from None
    w = compute_vertical_transport(h, u, None, cfg.dt, mesh)
    return u, w


def build_state(cfg: ScenarioConfig, mesh: Mesh2D | None = None) -> TracerState:
    mesh = build_mesh(cfg) if mesh is None else mesh
    u, w = build_velocity(cfg, mesh)
    h = np.broadcast_to(mesh.dz_rest[:, None], (mesh.nz, mesh.nx)).copy()
    disc = Discretization(cfg.horizontal_order, cfg.vertical_advection)
    return TracerState(mesh=mesh, h=h, u=u, w=w, kappa_x=cfg.kappa_x, kappa_z=cfg.kappa_z,
                       disc=disc)


def initial_tracers(cfg: ScenarioConfig, mesh: Mesh2D) -> np.ndarray:
    """Tracer concentrations, shape (nz, nx, n_tracers).

    step-x: ic_left for x < ic_split and ic_right otherwise; tracer t adds
    t * tracer_offset to both values so every tracer has its own state.
    """
    if cfg.initial_condition == "custom-file":
        base = read_field_csv(cfg.ic_file, mesh)
        return np.repeat(base[:, :, None], cfg.n_tracers, axis=2) + \
            cfg.tracer_offset * np.arange(cfg.n_tracers)
    left = np.broadcast_to(mesh.x_cell < cfg.ic_split, (mesh.nz, mesh.nx))
    out = np.empty((mesh.nz, mesh.nx, cfg.n_tracers))
    for t in range(cfg.n_tracers):
        off = t * cfg.tracer_offset
        out[:, :, t] = np.where(left, cfg.ic_left + off, cfg.ic_right + off)
    return out
