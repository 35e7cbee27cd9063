"""
Time integrators for the split tracer system F(ht) = J^z ht + R(ht).

Tracer fields are cell arrays of shape (nz, nx); several tracers are
stacked as (nz, nx, ntracers) or passed as a list of (nz, nx) arrays. The
exponential schemes need a phi backend: ``StoredPhi`` (blocks formed by
scaling and squaring) or ``KrylovPhi`` (restarted Arnoldi applied to each
vector, nothing stored).
"""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from .krylov_phi import restarted_phi_apply
from .phi_core import BandedMatrix, choose_scaling_exponent, compute_phi1, compute_phi_family
from .tracer_system import (
    BlockDiagOperator,
    SplitJacobian,
    TracerState,
    assemble_rhs,
    assemble_vertical_jacobian,
    horizontal_terms,
    vertical_bands,
    vertical_terms,
)

__all__ = [
    "SCHEMES",
    "SchemeConfig",
    "PhaseTimer",
    "StoredPhi",
    "KrylovPhi",
    "KrylovConvergenceError",
    "precompute_phi_blocks",
    "step_etd2_pc",
    "step_etd1",
    "step_etd2_rk",
    "step_rk4_implicit_euler",
    "solve_vertical_diffusion",
    "Stepper",
]

SCHEMES = ("etd2-pc-ss", "etd2-pc-krylov", "etd1", "etd2-rk", "rk4-ie")
PHASES = ("phi_assembly", "phi_apply", "rhs", "linear_solve")


@dataclass(frozen=True)
class SchemeConfig:
    """Time integrator and phi backend settings.

    ``backend`` defaults to "krylov" for etd2-pc-krylov and to scaling and
    squaring ("ss") otherwise. ``phi_M=None`` picks the scaling exponent
    per block from its norm. Krylov columns within ``krylov_outer_columns``
    of either wall use ``krylov_m``; the others use ``krylov_m_inner`` when
    it is set.
    """

    scheme: str = "etd2-pc-ss"
    dt: float = 3.0
    phi_M: Optional[int] = None
    phi_r: int = 12
    phi_variant: str = "simple"
    backend: Optional[str] = None
    krylov_m: int = 20
    krylov_m_inner: Optional[int] = None
    krylov_outer_columns: int = 3
    krylov_tol: float = 1e-8
    krylov_max_cycles: int = 10
    reuse_phi_across_tracers: bool = True
    reuse_phi_across_stages: bool = True
    fixed_jacobian: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.phi_M is not None and self.phi_M < 0:
            raise ValueError("phi_M must be >= 0")
        if self.backend not in (None, "ss", "krylov"):
            raise ValueError("backend must be 'ss' or 'krylov'")
        if self.scheme == "etd2-pc-ss" and self.backend == "krylov":
            raise ValueError("etd2-pc-ss uses the scaling-and-squaring backend")
        if self.scheme == "etd2-pc-krylov" and self.backend == "ss":
            raise ValueError("etd2-pc-krylov uses the Krylov backend")
        if self.phi_variant not in ("simple", "bkv"):
            raise ValueError("phi_variant must be 'simple' or 'bkv'")
        if self.krylov_m < 1 or (self.krylov_m_inner is not None and self.krylov_m_inner < 1):
            raise ValueError("Krylov dimensions must be >= 1")
        if self.krylov_tol <= 0 or self.krylov_max_cycles < 1:
            raise ValueError("krylov_tol must be > 0 and krylov_max_cycles >= 1")

    @property
    def phi_backend(self) -> Optional[str]:
        if self.scheme == "rk4-ie":
            return None
        if self.backend is not None:
            return self.backend
        return "krylov" if self.scheme == "etd2-pc-krylov" else "ss"

    @property
    def k_max(self) -> int:
        return 2 if self.scheme == "etd2-rk" else 1

    def krylov_dims(self, nx: int) -> np.ndarray:
        dims = np.full(nx, self.krylov_m)
        if self.krylov_m_inner is not None:
            c = np.arange(nx)
            inner = (c >= self.krylov_outer_columns) & (c < nx - self.krylov_outer_columns)
            dims[inner] = self.krylov_m_inner
        return dims


class PhaseTimer:
    """Accumulates wall time per named phase (phases must not nest)."""

    def __init__(self):
        self.totals: Dict[str, float] = defaultdict(float)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0


def _phase(timer, name):
    return timer.phase(name) if timer is not None else nullcontext()


class KrylovConvergenceError(RuntimeError):
    def __init__(self, block: int, cycles: int, correction: float):
        super().__init__(f"Krylov phi did not converge in column block {block} after "
                         f"{cycles} cycles (relative correction {correction:.3e})")
        self.block = block
        self.cycles = cycles
        self.correction = correction


@dataclass
class StoredPhi:
    """phi_k(dt J^{z,i}) for every column block, formed once and applied many times."""

    blocks: Dict[int, BlockDiagOperator]
    valid_for_step: int = 0
    M: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def apply(self, k: int, y: np.ndarray) -> np.ndarray:
        if k not in self.blocks:
            raise ValueError(f"phi_{k} blocks were not computed")
        return self.blocks[k].apply(y)


class KrylovPhi:
    """phi_k(dt J^{z,i}) b_i by restarted Arnoldi, column blocks grouped by Krylov dimension.

    Columns with the same dimension are processed as one batch; tracers are
    processed one after the other, so the cost grows with the tracer count.
    """

    def __init__(self, jac: SplitJacobian, dt: float, config: SchemeConfig):
        self.jac = jac
        self.dt = dt
        self.config = config
        stacked = jac.blocks.stacked
        self._scaled = dt * stacked
        dims = config.krylov_dims(len(stacked))
        self.groups = [(int(m), np.nonzero(dims == m)[0]) for m in np.unique(dims)]
        self.last_cycles = np.zeros(len(stacked), dtype=int)

    def _apply_one(self, k: int, y: np.ndarray) -> np.ndarray:
        out = np.empty_like(y)
        cfg = self.config
        for m, cols in self.groups:
            sub = self._scaled.member(cols)
            x, info = restarted_phi_apply(sub.matvec, y[:, cols], k, m,
                                          max_cycles=cfg.krylov_max_cycles, tol=cfg.krylov_tol,
                                          full_output=True)
            self.last_cycles[cols] = info.cycles
            if not info.all_converged:
                bad = int(np.nonzero(~info.converged)[0][0])
                raise KrylovConvergenceError(int(cols[bad]), int(info.cycles[bad]),
                                             float(info.correction_norm[bad]))
            out[:, cols] = x
        return out

    def apply(self, k: int, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            return self._apply_one(k, y)
        return np.stack([self._apply_one(k, y[:, :, t]) for t in range(y.shape[2])], axis=2)


def precompute_phi_blocks(jac: SplitJacobian, dt: float, config: SchemeConfig,
                          step: int = 0) -> StoredPhi:
    """phi_1 (and phi_2 for etd2-rk) of dt J^{z,i} for every column.

    The scaling exponent is ``config.phi_M`` or chosen per block; blocks that
    share an exponent are computed together as one batch.
    """
    stacked = jac.blocks.stacked
    nb, n = len(stacked), stacked.n
    if config.phi_M is not None:
        Ms = np.full(nb, config.phi_M)
    else:
        Ms = np.array([choose_scaling_exponent(stacked.member(i), dt) for i in range(nb)])
    k_max = config.k_max
    parts = {k: [None] * nb for k in range(1, k_max + 1)}
    for M in np.unique(Ms):
        idx = np.nonzero(Ms == M)[0]
        sub = stacked.member(idx)
        if k_max == 1 and config.phi_variant == "simple":
            res = {1: compute_phi1(sub, dt, M=int(M), r=config.phi_r)}
        else:
            fam = compute_phi_family(sub, dt, k_max, M=int(M), r=config.phi_r,
                                     variant=config.phi_variant)
            res = {k: fam[k] for k in range(1, k_max + 1)}
        for k, mat in res.items():
            for j, i in enumerate(idx):
                parts[k][i] = mat.member(j)
    if len(np.unique(Ms)) == 1:
        # single group: keep the batched result as is
        blocks = {k: BlockDiagOperator(res[k]) for k in res}
    else:
        blocks = {k: BlockDiagOperator(parts[k]) for k in parts}
    return StoredPhi(blocks=blocks, valid_for_step=step, M=Ms)


# ----------------------------------------------------------------------------
# tracer stacking helpers

def _stacked(T):
    if isinstance(T, (list, tuple)):
        return np.stack([np.asarray(t, dtype=float) for t in T], axis=2), lambda a: [
            a[:, :, i] for i in range(a.shape[2])]
    return np.asarray(T, dtype=float), lambda a: a


def _remainder(state, ht, jac, exact_split, F=None):
    """R(ht) = F(ht) - J^z ht; only the horizontal terms when J^z is the exact vertical Jacobian."""
    if exact_split:
        return horizontal_terms(state, ht)
    if F is None:
        F = assemble_rhs(state, ht)
    return F - jac.apply(ht)


def step_etd2_pc(T_n, state: TracerState, jac: SplitJacobian, phi, dt: float, *,
                 phi_stage2=None, exact_split: bool = True, timer=None):
    """Two-stage exponential predictor-corrector using only phi_1.

    T* = T_n + dt phi_1(dt J) F(T_n)
    T_{n+1} = T* + dt/2 phi_1(dt J) (R(T*) - R(T_n))
    """
    y, restore = _stacked(T_n)
    with _phase(timer, "rhs"):
        F = assemble_rhs(state, y)
        R_n = F - jac.apply(y)
    with _phase(timer, "phi_apply"):
        y_star = y + dt * phi.apply(1, F)
    with _phase(timer, "rhs"):
        R_star = _remainder(state, y_star, jac, exact_split)
    second = phi if phi_stage2 is None else phi_stage2
    with _phase(timer, "phi_apply"):
        out = y_star + 0.5 * dt * second.apply(1, R_star - R_n)
    return restore(out)


def step_etd1(T_n, state: TracerState, jac: SplitJacobian, phi, dt: float, *, timer=None):
    """Exponential Euler: T_{n+1} = T_n + dt phi_1(dt J) F(T_n)."""
    y, restore = _stacked(T_n)
    with _phase(timer, "rhs"):
        F = assemble_rhs(state, y)
    with _phase(timer, "phi_apply"):
        out = y + dt * phi.apply(1, F)
    return restore(out)


def step_etd2_rk(T_n, state: TracerState, jac: SplitJacobian, phi, dt: float, *,
                 exact_split: bool = True, timer=None):
    """ETD2-RK: exponential Euler predictor, then T* + dt phi_2(dt J)(R(T*) - R(T_n))."""
    y, restore = _stacked(T_n)
    with _phase(timer, "rhs"):
        F = assemble_rhs(state, y)
        R_n = F - jac.apply(y)
    with _phase(timer, "phi_apply"):
        y_star = y + dt * phi.apply(1, F)
    with _phase(timer, "rhs"):
        R_star = _remainder(state, y_star, jac, exact_split)
    with _phase(timer, "phi_apply"):
        out = y_star + dt * phi.apply(2, R_star - R_n)
    return restore(out)


def solve_vertical_diffusion(state: TracerState, y: np.ndarray, dt: float) -> np.ndarray:
    """Solve (I - dt D_z) x = y for every column and tracer at once.

    The columns are stacked into one tridiagonal system (column-major
    order, no coupling across column boundaries).
    """
    nz, nx = state.h.shape
    lower, diag, upper = vertical_bands(state, advection=False, diffusion=True)
    N = nz * nx
    ab = np.zeros((3, N))
    ab[1] = (1.0 - dt * diag).T.reshape(N)
    if nz > 1:
        sup = np.zeros((nx, nz))
        sub = np.zeros((nx, nz))
        sup[:, 1:] = -dt * upper.T      # a[g-1, g]
        sub[:, :-1] = -dt * lower.T     # a[g+1, g]
        ab[0] = sup.reshape(N)
        ab[2] = sub.reshape(N)
    # D_z has non-negative off-diagonals and zero column sums, so I - dt D_z is
    # strictly column diagonally dominant for kappa_z >= 0
    # (in banded storage column g of the matrix is ab[:, g])
    assert np.all(ab[1] > np.abs(ab[0]) + np.abs(ab[2])), "implicit diffusion system is singular"
    shape = y.shape
    rhs = np.moveaxis(y, 1, 0).reshape(N, -1)
    x = solve_banded((1, 1), ab, rhs, check_finite=False)
    return np.moveaxis(x.reshape((nx, nz) + shape[2:]), 0, 1)


def step_rk4_implicit_euler(T_n, state: TracerState, dt: float, *, timer=None):
    """Classical RK4 on everything except vertical diffusion, then one implicit Euler solve."""
    if state.kappa_z < 0:
        raise ValueError("kappa_z must be non-negative")
    y, restore = _stacked(T_n)

    def f(v):
        return horizontal_terms(state, v) + vertical_terms(state, v, diffusion=False)

    with _phase(timer, "rhs"):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if state.kappa_z > 0:
        with _phase(timer, "linear_solve"):
            y = solve_vertical_diffusion(state, y, dt)
    return restore(y)


class Stepper:
    """Advances a stack of tracers with one configured scheme.

    Owns the per-step Jacobian and phi bookkeeping: the vertical Jacobian
    and the phi operators are rebuilt every step unless ``fixed_jacobian``
    is set (experimental), in which case the operators from the first step
    are kept and the remainder is evaluated as F - J ht.
    """

    def __init__(self, state: TracerState, config: SchemeConfig, timer: PhaseTimer | None = None):
        self.state = state
        self.config = config
        self.timer = timer
        self._jac: SplitJacobian | None = None
        self._phi = None

    def _operators(self, n: int):
        cfg = self.config
        if cfg.fixed_jacobian and self._jac is not None:
            return self._jac, self._phi
        with _phase(self.timer, "phi_assembly"):
            jac = assemble_vertical_jacobian(self.state, step=n)
            if cfg.phi_backend == "krylov":
                phi = KrylovPhi(jac, cfg.dt, cfg)
            elif cfg.reuse_phi_across_tracers:
                phi = precompute_phi_blocks(jac, cfg.dt, cfg, step=n)
            else:
                phi = None   # formed per tracer in step()
        self._jac, self._phi = jac, phi
        return jac, phi

    def _fresh_phi(self, jac, n):
        with _phase(self.timer, "phi_assembly"):
            return precompute_phi_blocks(jac, self.config.dt, self.config, step=n)

    def step(self, ht: np.ndarray, n: int = 0) -> np.ndarray:
        cfg = self.config
        dt = cfg.dt
        if cfg.scheme == "rk4-ie":
            return step_rk4_implicit_euler(ht, self.state, dt, timer=self.timer)
        jac, phi = self._operators(n)
        exact = not cfg.fixed_jacobian
        if phi is None:
            # naive multi-tracer path: the phi blocks are formed again for every tracer
            cols = [self._advance(ht[..., t], jac, self._fresh_phi(jac, n), n, exact)
                    for t in range(ht.shape[2])] if ht.ndim == 3 else None
            if cols is None:
                return self._advance(ht, jac, self._fresh_phi(jac, n), n, exact)
            return np.stack(cols, axis=2)
        return self._advance(ht, jac, phi, n, exact)

    def _advance(self, ht, jac, phi, n, exact):
        cfg = self.config
        dt = cfg.dt
        if cfg.scheme in ("etd2-pc-ss", "etd2-pc-krylov"):
            phi2 = None
            if not cfg.reuse_phi_across_stages and isinstance(phi, StoredPhi):
                phi2 = self._fresh_phi(jac, n)
            return step_etd2_pc(ht, self.state, jac, phi, dt, phi_stage2=phi2,
                                exact_split=exact, timer=self.timer)
        if cfg.scheme == "etd1":
            return step_etd1(ht, self.state, jac, phi, dt, timer=self.timer)
        return step_etd2_rk(ht, self.state, jac, phi, dt, exact_split=exact, timer=self.timer)
