"""
Semi-discrete tracer equation and its vertical/horizontal split.

The prognostic unknown is the layer-integrated tracer ``ht = h * T``. For a
tracer array of shape (nz, nx) (or (nz, nx, ntracers)),

    F(ht) = V(ht) + H(ht)

where V collects vertical advection and vertical diffusion (linear in ht,
block diagonal over columns) and H the horizontal advection, horizontal
diffusion and an optional explicit source.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .mesh_ops import (
    Mesh2D,
    divergence_cell,
    edge_average,
    gradient_edge,
)
from .phi_core import BandedMatrix

__all__ = [
    "Discretization",
    "TracerState",
    "BlockDiagOperator",
    "SplitJacobian",
    "vertical_terms",
    "horizontal_terms",
    "assemble_rhs",
    "assemble_vertical_jacobian",
    "vertical_bands",
    "horizontal_remainder",
    "cfl_numbers",
]


@dataclass(frozen=True)
class Discretization:
    """Advection stencils: horizontal order 1 or 3, vertical 'upwind' or 'centered'."""

    horizontal_order: int = 1
    vertical: str = "upwind"

    def __post_init__(self):
        if self.horizontal_order not in (1, 3):
            raise ValueError("horizontal_order must be 1 or 3")
        if self.vertical not in ("upwind", "centered"):
            raise ValueError("vertical must be 'upwind' or 'centered'")


@dataclass
class TracerState:
    """Dynamics shared by every tracer: thickness, velocities, diffusivities.

    ``source`` is an optional callable ``source(T) -> d(ht)/dt`` added to the
    horizontal (explicit) part only.
    """

    mesh: Mesh2D
    h: np.ndarray                # (nz, nx)
    u: np.ndarray                # (nz, n_edges)
    w: np.ndarray                # (nz + 1, nx), upward transport through the top of layer k
    kappa_x: float = 0.0
    kappa_z: float = 0.0
    disc: Discretization = field(default_factory=Discretization)
    source: Optional[Callable] = None

    def __post_init__(self):
        m = self.mesh
        self.h = np.asarray(self.h, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.h.shape != (m.nz, m.nx):
            raise ValueError(f"h must have shape {(m.nz, m.nx)}")
        if self.u.shape != (m.nz, m.n_edges):
            raise ValueError(f"u must have shape {(m.nz, m.n_edges)}")
        if self.w.shape != (m.nz + 1, m.nx):
            raise ValueError(f"w must have shape {(m.nz + 1, m.nx)}")
        if np.any(self.h <= 0):
            raise ValueError("layer thickness must be positive")
        if self.kappa_x < 0 or self.kappa_z < 0:
            raise ValueError("diffusivities must be non-negative")
        self._cache = {}

    def concentration(self, ht: np.ndarray) -> np.ndarray:
        return ht / _trail(self.h, np.ndim(ht))

    def upwind_neighbors(self):
        """(left, right) neighbor cell of every cell, -1 at a wall."""
        if "nbr" not in self._cache:
            m = self.mesh
            coe, eoc = m.cells_on_edge, m.edges_on_cell
            left = coe[eoc[:, 0], 0]
            right = coe[eoc[:, 1], 1]
            self._cache["nbr"] = (left, right)
        return self._cache["nbr"]


def _trail(a, ndim):
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


class BlockDiagOperator:
    """Block-diagonal operator with one square banded block per column.

    Vectors are cell fields of shape (nz, nx[, m]); block i acts on column i.
    The blocks live in a single batched BandedMatrix; the global matrix is
    never assembled except by ``to_dense``.
    """

    def __init__(self, blocks):
        if isinstance(blocks, BandedMatrix):
            if len(blocks.batch_shape) != 1:
                raise ValueError("need a BandedMatrix with exactly one batch axis")
            stacked = blocks
        else:
            blocks = list(blocks)
            if not blocks:
                raise ValueError("need at least one block")
            stacked = BandedMatrix.stack(blocks)
        self.stacked = stacked
        self.block_size = stacked.n
        self._dense = None

    def __len__(self):
        return len(self.stacked)

    def __getitem__(self, i) -> BandedMatrix:
        return self.stacked.member(i)

    @property
    def blocks(self) -> List[BandedMatrix]:
        return [self.stacked.member(i) for i in range(len(self))]

    @property
    def max_bandwidth(self) -> int:
        return self.stacked.bandwidth

    def dense_stack(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.stacked.to_dense()
        return self._dense

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.block_size or y.shape[1] != len(self):
            raise ValueError("vector shape does not match the block structure")
        if 4 * self.max_bandwidth >= self.block_size:
            S = self.dense_stack()
            if y.ndim == 2:
                return np.einsum("ikl,li->ki", S, y)
            return np.einsum("ikl,lim->kim", S, y)
        return self.stacked.matvec(y)

    __call__ = apply

    def to_dense(self) -> np.ndarray:
        """Assembled matrix for column-major ordering (index = i*nz + k)."""
        n, nb = self.block_size, len(self)
        out = np.zeros((n * nb, n * nb))
        S = self.dense_stack()
        for i in range(nb):
            out[i * n:(i + 1) * n, i * n:(i + 1) * n] = S[i]
        return out


@dataclass
class SplitJacobian:
    """Vertical Jacobian J^z of F with respect to ht, one tridiagonal block per column."""

    blocks: BlockDiagOperator
    assembled_at: int = 0

    def apply(self, ht):
        return self.blocks.apply(ht)


def _vertical_interface_flux(state: TracerState, T: np.ndarray) -> np.ndarray:
    """Upward tracer transport through every interface (0 at surface and bottom)."""
    nd = T.ndim
    w = _trail(state.w[1:-1], nd)
    if state.disc.vertical == "upwind":
        T_int = np.where(w >= 0, T[1:], T[:-1])
    else:
        T_int = 0.5 * (T[:-1] + T[1:])
    flux = np.zeros((T.shape[0] + 1,) + T.shape[1:])
    flux[1:-1] = w * T_int
    return flux


def _vertical_diffusive_flux(state: TracerState, T: np.ndarray) -> np.ndarray:
    """Downward diffusive flux kappa_z (T_{k-1} - T_k) / hbar_k at interior interfaces."""
    q = np.zeros((T.shape[0] + 1,) + T.shape[1:])
    if state.kappa_z == 0.0:
        return q
    h = state.h
    hbar = _trail(0.5 * (h[:-1] + h[1:]), T.ndim)
    q[1:-1] = state.kappa_z * (T[:-1] - T[1:]) / hbar
    return q


def vertical_terms(state: TracerState, ht: np.ndarray, advection: bool = True,
                   diffusion: bool = True) -> np.ndarray:
    """-Tbar_k w_k + Tbar_{k+1} w_{k+1} + [D_z]_k (either part can be switched off)."""
    T = state.concentration(ht)
    out = np.zeros_like(T)
    if advection:
        adv = _vertical_interface_flux(state, T)
        out += adv[1:] - adv[:-1]
    if diffusion:
        q = _vertical_diffusive_flux(state, T)
        out += q[:-1] - q[1:]
    return out


def _edge_tracer(state: TracerState, T: np.ndarray) -> np.ndarray:
    """Upwind (order 1) or upwind-biased (order 3) tracer value on every edge."""
    mesh = state.mesh
    coe = mesh.cells_on_edge
    L = np.where(coe[:, 0] >= 0, coe[:, 0], coe[:, 1])
    R = np.where(coe[:, 1] >= 0, coe[:, 1], coe[:, 0])
    u = _trail(state.u, T.ndim)
    pos = u >= 0
    T_L, T_R = T[:, L], T[:, R]
    first = np.where(pos, T_L, T_R)
    if state.disc.horizontal_order == 1:
        return first
    left, right = state.upwind_neighbors()
    LL, RR = left[L], right[R]
    # (2 T_downwind + 5 T_upwind - T_upwind-upwind) / 6, first order where the stencil leaves the domain
    third_pos = (2.0 * T_R + 5.0 * T_L - T[:, np.where(LL >= 0, LL, 0)]) / 6.0
    third_neg = (2.0 * T_L + 5.0 * T_R - T[:, np.where(RR >= 0, RR, 0)]) / 6.0
    ok_pos = _trail((LL >= 0) & (coe[:, 0] >= 0) & (coe[:, 1] >= 0), T.ndim - 1)[None]
    ok_neg = _trail((RR >= 0) & (coe[:, 0] >= 0) & (coe[:, 1] >= 0), T.ndim - 1)[None]
    return np.where(pos, np.where(ok_pos, third_pos, T_L), np.where(ok_neg, third_neg, T_R))


def horizontal_terms(state: TracerState, ht: np.ndarray, include_source: bool = True) -> np.ndarray:
    """-div(hhat u That) + div(hhat kappa_x grad T) (+ source)."""
    mesh = state.mesh
    T = state.concentration(ht)
    nd = T.ndim
    h_edge = _trail(edge_average(state.h, mesh), nd)
    flux = h_edge * _trail(state.u, nd) * _edge_tracer(state, T)
    flux[:, mesh.boundary_edges] = 0.0
    out = -divergence_cell(flux, mesh)
    if state.kappa_x != 0.0:
        out += divergence_cell(h_edge * state.kappa_x * gradient_edge(T, mesh), mesh)
    if include_source and state.source is not None:
        out += state.source(T)
    return out


def assemble_rhs(state: TracerState, ht: np.ndarray) -> np.ndarray:
    """Full tendency d(ht)/dt."""
    return horizontal_terms(state, ht) + vertical_terms(state, ht)


def vertical_bands(state: TracerState, advection: bool = True, diffusion: bool = True):
    """Tridiagonal coefficients of the vertical operator acting on ht.

    Returns (lower, diag, upper) with shapes (nz-1, nx), (nz, nx), (nz-1, nx):
    ``lower[k-1]`` = dV_k/d(ht)_{k-1} and ``upper[k-1]`` = dV_{k-1}/d(ht)_k.
    """
    nz, nx = state.h.shape
    diag = np.zeros((nz, nx))
    lower = np.zeros((nz - 1, nx))
    upper = np.zeros((nz - 1, nx))
    w = state.w[1:-1]                # interface between layers k-1 and k
    if advection and state.disc.vertical == "upwind":
        wp = np.maximum(w, 0.0)
        wm = np.minimum(w, 0.0)
        # w >= 0 carries T_k upward: layer k loses, layer k-1 gains
        diag[1:] -= wp
        upper += wp
        # w < 0 carries T_{k-1} downward
        lower -= wm
        diag[:-1] += wm
    elif advection:
        half = 0.5 * w
        lower -= half
        diag[1:] -= half
        diag[:-1] += half
        upper += half
    if diffusion and state.kappa_z != 0.0:
        g = state.kappa_z / (0.5 * (state.h[:-1] + state.h[1:]))
        lower += g
        diag[1:] -= g
        diag[:-1] -= g
        upper += g
    # chain rule: T_j = ht_j / h_j scales column j
    inv_h = 1.0 / state.h
    return lower * inv_h[:-1], diag * inv_h, upper * inv_h[1:]


def assemble_vertical_jacobian(state: TracerState, step: int = 0) -> SplitJacobian:
    """Exact Jacobian of ``vertical_terms`` with respect to ht."""
    nz, nx = state.h.shape
    lower, diag, upper = vertical_bands(state)
    if nz == 1:
        stacked = BandedMatrix(1, 0, 0, diag.T[:, :, None])
    else:
        data = np.zeros((nx, nz, 3))
        data[:, 1:, 0] = lower.T
        data[:, :, 1] = diag.T
        data[:, :-1, 2] = upper.T
        stacked = BandedMatrix(nz, 1, 1, data).trimmed()
    return SplitJacobian(BlockDiagOperator(stacked), assembled_at=step)


def horizontal_remainder(ht_eval, state: TracerState, jac: SplitJacobian | None = None,
                         F_precomputed=None) -> np.ndarray:
    """R(ht) = F(ht) - J^z ht.

    With ``F_precomputed`` (the full tendency at ``ht_eval``) this is
    ``F_precomputed - J^z ht_eval``; otherwise only the horizontal terms are
    evaluated.
    """
    if F_precomputed is not None:
        if jac is None:
            raise ValueError("the fast path needs the vertical Jacobian")
        return F_precomputed - jac.apply(ht_eval)
    return horizontal_terms(state, ht_eval)


def cfl_numbers(state: TracerState, dt: float, u_max: float | None = None,
                w_max: float | None = None):
    """(CFL_x, CFL_z) = (max|u| dt / dx, max|w| dt / dz).

    Velocity maxima default to the discrete maxima of the state; callers
    holding an analytic field may pass its exact maxima.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    m = state.mesh
    if u_max is None:
        u_max = float(np.abs(state.u).max())
    if w_max is None:
        w_max = float(np.abs(state.w).max())
    dz = float(np.min(m.dz_rest))
    return u_max * dt / m.dx, w_max * dt / dz
