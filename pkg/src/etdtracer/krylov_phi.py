"""
Restarted Arnoldi approximation of phi_k(A) b.

Every routine accepts one right-hand side of shape (n,) or a batch (n, B);
batch members never interact, so a batched call gives each member the same
result as a solo call. ``apply_A`` must map arrays of the shape it is given.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .phi_core import phi_dense_oracle

__all__ = [
    "ArnoldiDecomposition",
    "RestartState",
    "KrylovInfo",
    "arnoldi",
    "phi_small_dense",
    "assemble_block_hessenberg",
    "restarted_phi_apply",
]

BREAKDOWN_RTOL = 1e-14


@dataclass
class ArnoldiDecomposition:
    """A V_m = V_{m+1} H_tilde for one or a batch of starting vectors.

    Batched arrays carry the batch on the last axis: V is (n, m, B),
    H_tilde (m+1, m, B). ``m_eff`` is the per-member dimension actually
    built; after a breakdown the remaining columns are zero.
    """

    V: np.ndarray
    H_tilde: np.ndarray
    v_next: np.ndarray
    beta: np.ndarray
    m: int
    m_eff: np.ndarray
    breakdown: np.ndarray
    batched: bool = True

    @property
    def H(self) -> np.ndarray:
        return self.H_tilde[:-1]

    @property
    def eta_next(self):
        return self.H_tilde[-1, -1]

    def member(self, b: int = 0) -> "ArnoldiDecomposition":
        """Unbatched view of one member, trimmed to its built dimension."""
        m = int(self.m_eff[b])
        return ArnoldiDecomposition(
            V=self.V[:, :m, b], H_tilde=self.H_tilde[:m + 1, :m, b], v_next=self.v_next[:, b],
            beta=self.beta[b], m=m, m_eff=np.array([m]), breakdown=np.array([self.breakdown[b]]),
            batched=False,
        )


def _as_batch(apply_A, b):
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        return (lambda V: apply_A(V[:, 0])[:, None]), b[:, None], False
    return apply_A, b, True


def arnoldi(apply_A: Callable, b: np.ndarray, m: int, anorm: float | np.ndarray | None = None
            ) -> ArnoldiDecomposition:
    """m steps of Arnoldi: modified Gram-Schmidt plus one reorthogonalization pass.

    A breakdown is flagged when the new subdiagonal entry falls below
    1e-14 times a running estimate of ||A|| (the largest Hessenberg column
    norm seen, or ``anorm`` if larger); that member then stops growing.
    """
    apply_b, B0, batched = _as_batch(apply_A, b)
    n, nb = B0.shape
    if m < 1:
        raise ValueError("m must be >= 1")
    m = min(m, n)
    beta = np.linalg.norm(B0, axis=0)
    if np.any(beta == 0.0):
        raise ValueError("Arnoldi needs a nonzero starting vector")
    Vs = np.zeros((m + 1, n, nb))          # basis vectors stored contiguously
    H = np.zeros((m + 1, m, nb))
    Vs[0] = B0 / beta
    est = np.zeros(nb) if anorm is None else np.broadcast_to(np.asarray(anorm, float), (nb,)).copy()
    alive = np.ones(nb, dtype=bool)
    m_eff = np.full(nb, m)
    for j in range(m):
        w = apply_b(Vs[j])
        # modified Gram-Schmidt sweep
        for i in range(j + 1):
            hij = np.einsum("nb,nb->b", Vs[i], w)
            H[i, j] += hij
            w -= Vs[i] * hij
        # one reorthogonalization pass against the whole basis
        corr = np.einsum("inb,nb->ib", Vs[:j + 1], w)
        H[:j + 1, j] += corr
        w -= np.einsum("inb,ib->nb", Vs[:j + 1], corr)
        eta = np.linalg.norm(w, axis=0)
        col = np.sqrt(np.einsum("ib,ib->b", H[:j + 1, j], H[:j + 1, j]) + eta ** 2)
        est = np.maximum(est, col)
        stop = alive & (eta <= BREAKDOWN_RTOL * est)
        m_eff[stop] = j + 1
        alive &= ~stop
        eta = np.where(alive, eta, 0.0)
        H[j + 1, j] = eta
        H[:, j, ~alive & ~stop] = 0.0
        Vs[j + 1] = np.where(alive, w / np.where(eta > 0, eta, 1.0), 0.0)
        if not alive.any():
            Vs = Vs[:j + 2]
            H = H[:j + 2, :j + 1]
            m = j + 1
            break
    V = np.moveaxis(Vs, 0, 1)
    dec = ArnoldiDecomposition(V=V[:, :m], H_tilde=H, v_next=V[:, m], beta=beta, m=m,
                               m_eff=np.minimum(m_eff, m), breakdown=~alive)
    if not batched:
        return dec.member(0)
    return dec


def phi_small_dense(H: np.ndarray, k: int) -> np.ndarray:
    """phi_k of a small dense (block Hessenberg) matrix, or a stack of them."""
    return phi_dense_oracle(k, H, max_dim=1024)


def assemble_block_hessenberg(H_blocks: List[np.ndarray], etas: List[float]) -> np.ndarray:
    """Stack H_1..H_p on the diagonal with E_j = eta_j e_1 e_m^T below it."""
    sizes = [h.shape[0] for h in H_blocks]
    N = sum(sizes)
    out = np.zeros((N, N))
    off = 0
    for j, h in enumerate(H_blocks):
        s = sizes[j]
        out[off:off + s, off:off + s] = h
        if j > 0:
            out[off, off - 1] = etas[j - 1]
        off += s
    return out


@dataclass
class RestartState:
    """Bookkeeping of a restarted solve (batch on the last axis)."""

    cycle: int
    phi_accum: np.ndarray
    H_hat: np.ndarray            # (B, p*m, p*m) block Hessenberg so far
    beta: np.ndarray
    corrections: List[np.ndarray] = field(default_factory=list)


@dataclass
class KrylovInfo:
    cycles: np.ndarray           # per member
    converged: np.ndarray        # per member
    correction_norm: np.ndarray  # last relative correction per member
    max_cycles: int

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def restarted_phi_apply(apply_A: Callable, b: np.ndarray, k: int, m: int, max_cycles: int = 10,
                        tol: float = 1e-10, full_output: bool = False):
    """phi_k(A) b by restarted Arnoldi.

    Cycle p runs m Arnoldi steps from the last basis vector of cycle p-1,
    appends H_p to the block Hessenberg matrix Hhat_p and adds the trailing
    block of ||b|| V_p [phi_k(Hhat_p) e_1] to the running approximation.
    A member stops once its correction norm is <= tol times the norm of its
    approximation; members still running after ``max_cycles`` are reported
    as not converged (``full_output=True`` returns a KrylovInfo).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    apply_b, B0, batched = _as_batch(apply_A, b)
    n, nb = B0.shape
    m = min(m, n)
    beta = np.linalg.norm(B0, axis=0)
    x = np.zeros((n, nb))
    cycles = np.zeros(nb, dtype=int)
    rel = np.zeros(nb)
    done = beta == 0.0
    start = np.zeros((n, nb))
    start[:, ~done] = B0[:, ~done] / beta[~done]
    H_hat = np.zeros((nb, 0, 0))
    anorm = np.zeros(nb)
    prev_eta = np.zeros(nb)
    for p in range(1, max_cycles + 1):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break

        def sub_apply(V, act=act):
            full = np.zeros((n, nb))
            full[:, act] = V
            return apply_b(full)[:, act]

        dec = arnoldi(sub_apply, start[:, act], m, anorm=anorm[act])
        mm = dec.m
        size = H_hat.shape[1]
        grown = np.zeros((nb, size + mm, size + mm))
        grown[:, :size, :size] = H_hat
        grown[act, size:, size:] = np.moveaxis(dec.H, -1, 0)
        if size:
            # E_p = eta_p e_1 e_m^T couples this cycle to the last vector of the previous one
            grown[act, size, size - 1] = prev_eta[act]
        H_hat = grown
        anorm[act] = np.maximum(anorm[act], np.abs(dec.H).sum(axis=0).max(axis=0))
        coef = phi_small_dense(H_hat[act], k)[:, size:, 0]
        corr = np.einsum("nmb,bm->nb", dec.V, coef) * beta[act]
        x[:, act] += corr
        cycles[act] = p
        cn = np.linalg.norm(corr, axis=0)
        xn = np.linalg.norm(x[:, act], axis=0)
        rel[act] = cn / np.where(xn > 0, xn, 1.0)
        conv = (cn <= tol * xn) | dec.breakdown
        done[act[conv]] = True
        prev_eta[act] = dec.H_tilde[-1, -1]
        start = np.zeros((n, nb))
        start[:, act] = dec.v_next
    converged = done.copy()
    out = x if batched else x[:, 0]
    if full_output:
        return out, KrylovInfo(cycles=cycles, converged=converged, correction_norm=rel,
                               max_cycles=max_cycles)
    return out
