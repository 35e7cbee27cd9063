"""
Staggered (x, z) mesh and the discrete spatial operators on it.

Layers are indexed k = 0..nz-1 from the top; interfaces k = 0..nz with
interface k the top face of layer k. Cell fields have shape (nz, nx),
edge fields (nz, n_edges) and interface fields (nz + 1, nx). Any trailing
axes (e.g. several tracers) are carried along.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mesh2D",
    "LayeredField",
    "line_mesh",
    "divergence_cell",
    "gradient_edge",
    "vertical_average",
    "delta_z_up",
    "delta_z_down",
    "edge_average",
    "z_level_h_ale",
    "compute_vertical_transport",
]

CELL, EDGE, INTERFACE = "cell", "edge", "interface"


@dataclass(frozen=True)
class Mesh2D:
    """Line of cells in x times a stack of layers.

    The horizontal operators only go through the adjacency arrays
    (``edges_on_cell``/``edge_sign_on_cell`` for E(i), ``cells_on_edge``
    for C(e)) so a different horizontal topology could be dropped in.
    """

    nx: int
    nz: int
    dx: float
    dz_rest: np.ndarray          # (nz,)
    x_cell: np.ndarray           # (nx,)
    x_edge: np.ndarray           # (n_edges,)
    area_cell: np.ndarray        # A_i
    dc_edge: np.ndarray          # d_e, center-to-center distance
    dv_edge: np.ndarray          # l_e, edge length
    cells_on_edge: np.ndarray    # (n_edges, 2) [left, right], -1 if absent
    edges_on_cell: np.ndarray    # (nx, 2) [left, right]
    edge_sign_on_cell: np.ndarray  # n_{e,i}: +1 when the edge normal points out of i
    periodic: bool = False

    @property
    def n_edges(self) -> int:
        return self.x_edge.size

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.nonzero(np.any(self.cells_on_edge < 0, axis=1))[0]

    @property
    def interior_edges(self) -> np.ndarray:
        return np.nonzero(np.all(self.cells_on_edge >= 0, axis=1))[0]

    @property
    def z_interface(self) -> np.ndarray:
        return -np.concatenate([[0.0], np.cumsum(self.dz_rest)])

    @property
    def z_cell(self) -> np.ndarray:
        zi = self.z_interface
        return 0.5 * (zi[:-1] + zi[1:])


@dataclass
class LayeredField:
    values: np.ndarray
    kind: str = CELL


def line_mesh(nx: int, nz: int, x_max: float, z_min: float, periodic: bool = False,
              dz_rest=None) -> Mesh2D:
    """Uniform line mesh on [0, x_max] x [z_min, 0]."""
    if nx < 1 or nz < 1:
        raise ValueError("nx and nz must be >= 1")
    if x_max <= 0 or z_min >= 0:
        raise ValueError("need x_max > 0 and z_min < 0")
    dx = x_max / nx
    if dz_rest is None:
        dz_rest = np.full(nz, -z_min / nz)
    dz_rest = np.asarray(dz_rest, dtype=float)
    if dz_rest.shape != (nz,) or np.any(dz_rest <= 0):
        raise ValueError("dz_rest must hold nz positive thicknesses")
    x_cell = (np.arange(nx) + 0.5) * dx
    if periodic:
        n_edges = nx
        x_edge = np.arange(nx) * dx
        # edge e sits on the left face of cell e
        cells_on_edge = np.stack([(np.arange(nx) - 1) % nx, np.arange(nx)], axis=1)
        edges_on_cell = np.stack([np.arange(nx), (np.arange(nx) + 1) % nx], axis=1)
    else:
        n_edges = nx + 1
        x_edge = np.arange(nx + 1) * dx
        left = np.arange(-1, nx)
        right = np.arange(0, nx + 1)
        right[-1] = -1
        cells_on_edge = np.stack([left, right], axis=1)
        edges_on_cell = np.stack([np.arange(nx), np.arange(1, nx + 1)], axis=1)
    sign = np.tile([-1.0, 1.0], (nx, 1))
    for arr in (x_cell, x_edge, dz_rest):
        arr.flags.writeable = False
    return Mesh2D(
        nx=nx, nz=nz, dx=dx, dz_rest=dz_rest, x_cell=x_cell, x_edge=x_edge,
        area_cell=np.full(nx, dx), dc_edge=np.full(n_edges, dx), dv_edge=np.ones(n_edges),
        cells_on_edge=cells_on_edge, edges_on_cell=edges_on_cell,
        edge_sign_on_cell=sign, periodic=periodic,
    )


def _values(field, kind, expected_len, axis_name):
    if isinstance(field, LayeredField):
        if field.kind != kind:
            raise ValueError(f"expected a {kind} field, got {field.kind}")
        field = field.values
    field = np.asarray(field, dtype=float)
    if field.ndim < 2 or field.shape[1] != expected_len:
        raise ValueError(f"{kind} field must have {expected_len} {axis_name} on axis 1, "
                         f"got shape {field.shape}")
    return field


def _bcast(arr, ndim):
    """Append singleton axes so ``arr`` broadcasts against an ndim-array."""
    return arr.reshape(arr.shape + (1,) * max(ndim - arr.ndim, 0))


def divergence_cell(Y, mesh: Mesh2D) -> np.ndarray:
    """[div Y]_i = (1/A_i) sum_{e in E(i)} n_{e,i} Y_e l_e."""
    Y = _values(Y, EDGE, mesh.n_edges, "edges")
    eoc = mesh.edges_on_cell
    w = mesh.edge_sign_on_cell * mesh.dv_edge[eoc] / mesh.area_cell[:, None]
    w = _bcast(w, Y.ndim)[None]
    return np.sum(Y[:, eoc] * w, axis=2)


def gradient_edge(psi, mesh: Mesh2D) -> np.ndarray:
    """[grad psi]_e = (psi_right - psi_left) / d_e; zero on boundary edges."""
    psi = _values(psi, CELL, mesh.nx, "cells")
    coe = mesh.cells_on_edge
    out = np.zeros((psi.shape[0], mesh.n_edges) + psi.shape[2:])
    inner = mesh.interior_edges
    L, R = coe[inner, 0], coe[inner, 1]
    out[:, inner] = (psi[:, R] - psi[:, L]) / _bcast(mesh.dc_edge[inner], psi.ndim - 1)
    return out


def edge_average(psi, mesh: Mesh2D) -> np.ndarray:
    """Mean of the two cells next to each edge; boundary edges copy their one neighbor."""
    psi = _values(psi, CELL, mesh.nx, "cells")
    coe = mesh.cells_on_edge
    L = np.where(coe[:, 0] >= 0, coe[:, 0], coe[:, 1])
    R = np.where(coe[:, 1] >= 0, coe[:, 1], coe[:, 0])
    return 0.5 * (psi[:, L] + psi[:, R])


def vertical_average(psi) -> np.ndarray:
    """Interface values (psi_{k-1} + psi_k)/2; the top and bottom interfaces are 0."""
    psi = np.asarray(psi, dtype=float)
    out = np.zeros((psi.shape[0] + 1,) + psi.shape[1:])
    out[1:-1] = 0.5 * (psi[:-1] + psi[1:])
    return out


def _check_h(h):
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("layer thickness must be positive")
    return h


def delta_z_up(psi, h) -> np.ndarray:
    """Cell -> interface difference (psi_{k-1} - psi_k) / hbar_k, hbar_k = (h_{k-1}+h_k)/2.

    Top and bottom interfaces are returned as 0.
    """
    psi = np.asarray(psi, dtype=float)
    h = _check_h(h)
    out = np.zeros((psi.shape[0] + 1,) + psi.shape[1:])
    hbar = 0.5 * (h[:-1] + h[1:])
    out[1:-1] = (psi[:-1] - psi[1:]) / _bcast(hbar, psi.ndim)
    return out


def delta_z_down(psi_interface, h) -> np.ndarray:
    """Interface -> cell difference (psi_k - psi_{k+1}) / h_k."""
    psi = np.asarray(psi_interface, dtype=float)
    h = _check_h(h)
    d = psi[:-1] - psi[1:]
    return d / _bcast(h, d.ndim)


def z_level_h_ale(h, h_rest) -> np.ndarray:
    """Target thickness for z-level coordinates: all sea-surface change goes to the top layer."""
    h = np.asarray(h, dtype=float)
    h_rest = np.asarray(h_rest, dtype=float)
    if h_rest.ndim == 1:
        h_rest = np.broadcast_to(h_rest[:, None], h.shape)
    zeta = h.sum(axis=0) - h_rest.sum(axis=0)
    h_ale = np.array(h_rest, dtype=float)
    h_ale[0] = h_rest[0] + zeta
    return h_ale


def compute_vertical_transport(h, u, h_ale, dt: float, mesh: Mesh2D,
                               coordinate: str = "z-level") -> np.ndarray:
    """Cross-interface transport w from the layer thickness equation.

    Bottom-up: w_{nz} = 0 and w_k = w_{k+1} - div(h_k u_k) - (h_ale_k - h_k)/dt.
    ``coordinate="isopycnal"`` returns w = 0. When ``h_ale`` is None the
    z-level target is built from the mesh resting thicknesses.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = _check_h(h)
    w = np.zeros((mesh.nz + 1, mesh.nx))
    if coordinate == "isopycnal":
        return w
    if coordinate != "z-level":
        raise ValueError(f"unsupported vertical coordinate {coordinate!r}")
    if h_ale is None:
        h_ale = z_level_h_ale(h, mesh.dz_rest)
    h_ale = np.asarray(h_ale, dtype=float)
    div = divergence_cell(edge_average(h, mesh) * np.asarray(u, dtype=float), mesh)
    src = div + (h_ale - h) / dt
    for k in range(mesh.nz - 1, -1, -1):
        w[k] = w[k + 1] - src[k]
    return w
