"""
phi-functions of scalars, banded matrices and small dense matrices.

The matrix path uses Taylor-based polynomial approximations on a scaled
argument ``A / 2**M`` that are lifted back with the doubling recursion

    2**k phi_k(2z) = exp(z) phi_k(z) + sum_{j<k} phi_{k-j}(z) / j!

so that every approximation stays a polynomial in ``A`` and a banded input
yields a banded output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence

import numpy as np

__all__ = [
    "BandedMatrix",
    "PhiPolynomial",
    "PhiFamily",
    "phi_scalar",
    "build_poly",
    "banded_matmul",
    "phi_family_init",
    "phi_family_recurse",
    "compute_phi_family",
    "compute_phi1",
    "phi_dense_oracle",
    "choose_scaling_exponent",
    "error_bound",
]

MAX_ORDER = 30
# product bandwidth (as a fraction of n) above which products go through BLAS
_DENSE_FRACTION = 0.25


def phi_scalar(k: int, z) -> complex | float:
    """phi_k(z) for a real or complex scalar.

    Small arguments use the power series sum_n z**n / (n+k)!, larger ones
    the downward recurrence phi_k = (phi_{k-1} - 1/(k-1)!) / z.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.exp(z)
    if abs(z) <= max(1.0, 0.5 * k):
        # terms decay at least geometrically with ratio 1/2 here
        term = 1.0 / math.factorial(k)
        total = term
        for n in range(1, 200):
            term = term * z / (n + k)
            total = total + term
            if abs(term) <= 1e-17 * abs(total):
                break
        return total
    val = np.exp(z)
    for j in range(1, k + 1):
        val = (val - 1.0 / math.factorial(j - 1)) / z
    return val


class BandedMatrix:
    """Square matrix with explicit lower/upper bandwidth.

    Storage is by diagonals: ``data[..., i, d]`` holds ``A[i, i - lower + d]``,
    so column ``d`` of ``data`` is the diagonal with offset ``d - lower``.
    Slots that fall outside the matrix are kept at zero. Leading axes of
    ``data`` (if any) index a batch of matrices sharing n and the bandwidths;
    every operation then acts member by member.
    """

    __slots__ = ("n", "lower", "upper", "data")
    # numpy scalars on the left of * must defer to __rmul__ instead of broadcasting
    __array_ufunc__ = None

    def __init__(self, n: int, lower: int, upper: int, data: np.ndarray):
        if n < 1:
            raise ValueError("dimension must be positive")
        if not (0 <= lower < n and 0 <= upper < n):
            raise ValueError(f"bandwidths ({lower}, {upper}) invalid for n={n}")
        data = np.array(data, dtype=float)
        if data.shape[-2:] != (n, lower + upper + 1):
            raise ValueError(f"data shape {data.shape} does not end in {(n, lower + upper + 1)}")
        data[..., _outside_mask(n, lower, upper)] = 0.0
        data.flags.writeable = False
        self.n = n
        self.lower = lower
        self.upper = upper
        self.data = data

    # constructors -------------------------------------------------------
    @classmethod
    def zeros(cls, n: int, lower: int = 0, upper: int = 0, batch: tuple = ()) -> "BandedMatrix":
        return cls(n, lower, upper, np.zeros(tuple(batch) + (n, lower + upper + 1)))

    @classmethod
    def identity(cls, n: int, batch: tuple = ()) -> "BandedMatrix":
        return cls(n, 0, 0, np.ones(tuple(batch) + (n, 1)))

    @classmethod
    def from_diagonals(cls, diagonals: dict) -> "BandedMatrix":
        """Build from ``{offset: values}``; a diagonal of offset ``o`` has n-|o| values."""
        n = None
        for off, vals in diagonals.items():
            m = len(vals) + abs(off)
            if n is not None and m != n:
                raise ValueError("inconsistent diagonal lengths")
            n = m
        lower = max([-o for o in diagonals if o < 0], default=0)
        upper = max([o for o in diagonals if o > 0], default=0)
        data = np.zeros((n, lower + upper + 1))
        for off, vals in diagonals.items():
            rows = np.arange(max(0, -off), min(n, n - off))
            data[rows, off + lower] = vals
        return cls(n, lower, upper, data)

    @classmethod
    def from_dense(cls, A, lower: int | None = None, upper: int | None = None) -> "BandedMatrix":
        """Band of a dense matrix (or a stack of them); bands default to the nonzero pattern."""
        A = np.asarray(A, dtype=float)
        n = A.shape[-1]
        if A.ndim < 2 or A.shape[-2] != n:
            raise ValueError("matrix must be square")
        if lower is None or upper is None:
            nzr = np.any(A != 0.0, axis=tuple(range(A.ndim - 2)))
            rows, cols = np.nonzero(nzr)
            off = cols - rows
            if lower is None:
                lower = int(max(0, -off.min())) if off.size else 0
            if upper is None:
                upper = int(max(0, off.max())) if off.size else 0
        rows, cols, valid = _band_index(n, lower, upper)
        data = np.zeros(A.shape[:-2] + (n, lower + upper + 1))
        data[..., valid] = A[..., rows[valid], cols[valid]]
        return cls(n, lower, upper, data)

    @classmethod
    def stack(cls, blocks: Sequence["BandedMatrix"]) -> "BandedMatrix":
        """Batch of unbatched matrices, widened to a common band."""
        if not blocks:
            raise ValueError("need at least one matrix")
        n = blocks[0].n
        if any(b.n != n for b in blocks):
            raise ValueError("all matrices must share one dimension")
        lower = max(b.lower for b in blocks)
        upper = max(b.upper for b in blocks)
        return cls(n, lower, upper, np.stack([b.widened(lower, upper).data for b in blocks]))

    # views --------------------------------------------------------------
    @property
    def batch_shape(self) -> tuple:
        return self.data.shape[:-2]

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched BandedMatrix has no length")
        return self.batch_shape[0]

    def member(self, idx) -> "BandedMatrix":
        return BandedMatrix(self.n, self.lower, self.upper, self.data[idx])

    @property
    def bandwidth(self) -> int:
        return max(self.lower, self.upper)

    @property
    def shape(self):
        return self.batch_shape + (self.n, self.n)

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros(self.batch_shape + (n, n))
        rows, cols, valid = _band_index(n, self.lower, self.upper)
        out[..., rows[valid], cols[valid]] = self.data[..., valid]
        return out

    def diagonal(self, offset: int = 0) -> np.ndarray:
        n = self.n
        if abs(offset) >= n:
            raise ValueError("offset out of range")
        rows = np.arange(max(0, -offset), min(n, n - offset))
        if -self.lower <= offset <= self.upper:
            return self.data[..., rows, offset + self.lower].copy()
        return np.zeros(self.batch_shape + (rows.size,))

    def __getitem__(self, idx):
        if self.batch_shape:
            raise TypeError("index a batch member first with member()")
        i, j = idx
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(idx)
        off = j - i
        if -self.lower <= off <= self.upper:
            return float(self.data[i, off + self.lower])
        return 0.0

    def trimmed(self) -> "BandedMatrix":
        """Shrink the declared bands to the outermost nonzero diagonals (over the whole batch)."""
        used = np.any(self.data != 0.0, axis=tuple(range(self.data.ndim - 1)))
        nz = np.nonzero(used)[0]
        if nz.size == 0:
            return BandedMatrix.zeros(self.n, batch=self.batch_shape)
        lo, hi = nz[0], nz[-1]
        lower = max(self.lower - lo, 0)
        upper = max(hi - self.lower, 0)
        start = self.lower - lower
        return BandedMatrix(self.n, lower, upper, self.data[..., start:start + lower + upper + 1])

    def widened(self, lower: int, upper: int) -> "BandedMatrix":
        lower = min(max(lower, self.lower), self.n - 1)
        upper = min(max(upper, self.upper), self.n - 1)
        if (lower, upper) == (self.lower, self.upper):
            return self
        data = np.zeros(self.batch_shape + (self.n, lower + upper + 1))
        s = lower - self.lower
        data[..., s:s + self.lower + self.upper + 1] = self.data
        return BandedMatrix(self.n, lower, upper, data)

    def norms_inf(self) -> np.ndarray:
        """Infinity norm of every batch member."""
        return np.abs(self.data).sum(axis=-1).max(axis=-1)

    def norm_inf(self) -> float:
        return float(np.max(self.norms_inf()))

    # arithmetic ----------------------------------------------------------
    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``A @ x``.

        Unbatched: x of shape (n,) or (n, m). Batched with batch size B:
        x of shape (n, B) or (n, B, m), member b acting on ``x[:, b]``.
        """
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        nb = len(self.batch_shape)
        if nb > 1:
            raise ValueError("matvec supports at most one batch axis")
        if nb == 1 and (x.ndim < 2 or x.shape[1] != self.batch_shape[0]):
            raise ValueError("batched matvec needs x of shape (n, B[, m])")
        n, lo = self.n, self.lower
        out = np.zeros(x.shape, dtype=np.result_type(x.dtype, float))
        # data as (n, [B,] width) so the diagonal slices line up with x
        coef = np.moveaxis(self.data, -2, 0) if nb else self.data
        extra = x.ndim - 1 - nb
        for d in range(lo + self.upper + 1):
            off = d - lo
            r0, r1 = max(0, -off), min(n, n - off)
            if r0 >= r1:
                continue
            col = coef[r0:r1, ..., d]
            out[r0:r1] += col.reshape(col.shape + (1,) * extra) * x[r0 + off:r1 + off]
        return out

    def __matmul__(self, other):
        if isinstance(other, BandedMatrix):
            return banded_matmul(self, other)
        return self.matvec(other)

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        if not isinstance(other, BandedMatrix):
            return NotImplemented
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        lower = max(self.lower, other.lower)
        upper = max(self.upper, other.upper)
        a = self.widened(lower, upper).data
        b = other.widened(lower, upper).data
        return BandedMatrix(self.n, lower, upper, a + b)

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        return self + (-1.0) * other

    def __mul__(self, c) -> "BandedMatrix":
        c = np.asarray(c, dtype=float)
        if c.ndim:
            # one scalar per batch member
            c = c.reshape(c.shape + (1, 1))
        return BandedMatrix(self.n, self.lower, self.upper, c * self.data)

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self

    def add_identity(self, c: float = 1.0) -> "BandedMatrix":
        data = self.data.copy()
        data[..., self.lower] += c
        return BandedMatrix(self.n, self.lower, self.upper, data)

    def __repr__(self):
        batch = f", batch={self.batch_shape}" if self.batch_shape else ""
        return f"BandedMatrix(n={self.n}, lower={self.lower}, upper={self.upper}{batch})"


@lru_cache(maxsize=256)
def _band_index(n, lower, upper):
    i = np.arange(n)[:, None]
    j = i - lower + np.arange(lower + upper + 1)[None, :]
    valid = (j >= 0) & (j < n)
    rows = np.broadcast_to(i, j.shape)
    for a in (rows, j, valid):
        a.flags.writeable = False
    return rows, j, valid


def _outside_mask(n, lower, upper):
    return ~_band_index(n, lower, upper)[2]


def banded_matmul(A: BandedMatrix, B: BandedMatrix) -> BandedMatrix:
    """Exact product of two banded matrices (or batches of them).

    The result has bandwidths ``(lA + lB, uA + uB)`` clamped to ``n - 1``.
    Narrow bands are multiplied diagonal by diagonal at O((1+b)^2 n) cost;
    once the product band covers a sizeable part of the matrix the product
    is formed densely.
    """
    if A.n != B.n:
        raise ValueError(f"dimension mismatch: {A.n} vs {B.n}")
    n = A.n
    lower = min(A.lower + B.lower, n - 1)
    upper = min(A.upper + B.upper, n - 1)
    wa = A.lower + A.upper + 1
    wb = B.lower + B.upper + 1
    if lower + upper + 1 > _DENSE_FRACTION * n and wa * wb > 16:
        return BandedMatrix.from_dense(A.to_dense() @ B.to_dense(), lower, upper)
    full_l = A.lower + B.lower
    width = wa + wb - 1
    batch = np.broadcast_shapes(A.batch_shape, B.batch_shape)
    out = np.zeros(batch + (n, width))
    for da in range(wa):
        off = da - A.lower
        r0, r1 = max(0, -off), min(n, n - off)
        if r0 >= r1:
            continue
        out[..., r0:r1, da:da + wb] += A.data[..., r0:r1, da, None] * B.data[..., r0 + off:r1 + off, :]
    start = full_l - lower
    return BandedMatrix(n, lower, upper, out[..., start:start + lower + upper + 1])


@dataclass(frozen=True)
class PhiPolynomial:
    """Polynomial p_0^0 approximating exp to order r, with its constants."""

    r: int
    coefficients: tuple
    rho0: float = 0.0
    c_q: float = 0.0

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


def build_poly(r: int) -> PhiPolynomial:
    """Taylor polynomial T_r as p_0^0 (remainder q = 0, rho0 = 0, c_q = 1/(r+1)!)."""
    if r < 1:
        raise ValueError("approximation order must be >= 1")
    if r > MAX_ORDER:
        raise ValueError(f"approximation order {r} > {MAX_ORDER}: coefficients underflow")
    coeffs = tuple(1.0 / math.factorial(j) for j in range(r + 1))
    return PhiPolynomial(r=r, coefficients=coeffs, rho0=0.0, c_q=1.0 / math.factorial(r + 1))


@dataclass
class PhiFamily:
    """Approximations p_k^M(A) for k = 0..k_max at scaling level M.

    ``matrices`` holds BandedMatrix entries, or numpy arrays when the family
    was built elementwise for scalar arguments.
    """

    k_max: int
    M: int
    matrices: List = field(default_factory=list)

    def __getitem__(self, k):
        return self.matrices[k]


def _algebra(A):
    if isinstance(A, BandedMatrix):
        ident = BandedMatrix.identity(A.n, batch=A.batch_shape)
        return ident, BandedMatrix.zeros(A.n, batch=A.batch_shape), banded_matmul
    z = np.asarray(A)
    if not np.iscomplexobj(z):
        z = z.astype(float)
    return np.ones_like(z), np.zeros_like(z), np.multiply


def phi_family_init(poly: PhiPolynomial, A_scaled, k_max: int) -> PhiFamily:
    """Level-0 approximations p_k^0(A_scaled), k = 0..k_max.

    Horner's scheme for p_0^0 runs b_j = A b_{j+1} + a_j downwards; its
    intermediates are exactly p_k^0 = sum_{j>=k} a_j A^{j-k}, so every
    member of the family comes out of a single pass, with no inverse of A.
    ``A_scaled`` may be a BandedMatrix or an array of scalars (elementwise).
    """
    if k_max < 0 or k_max > poly.r + 1:
        raise ValueError(f"k_max={k_max} outside 0..{poly.r + 1}")
    ident, zero, mul = _algebra(A_scaled)
    out = [None] * (k_max + 1)
    b = zero
    for j in range(poly.degree, -1, -1):
        if j + 1 <= k_max:
            out[j + 1] = b
        prod = mul(A_scaled, b) if j < poly.degree else zero
        b = prod + poly.coefficients[j] * ident
    out[0] = b
    return PhiFamily(k_max=k_max, M=0, matrices=out)


def phi_family_recurse(family: PhiFamily, variant: str = "simple") -> PhiFamily:
    """Lift a family at level M-1 (argument Y) to level M (argument 2Y).

    ``variant="simple"`` uses
        p_k^M = 2^-k (p_0 p_k + sum_{j<k} p_{k-j} / j!),
    ``variant="bkv"`` the half-index product form
        k = 2h:   2^-k (p_h^2 + 2 sum_{j<h} p_{k-j}/j!)
        k = 2h+1: 2^-k (p_h p_{h+1} + 2 sum_{j<h} p_{k-j}/j! + p_{h+1}/h!).
    """
    P = family.matrices
    _, _, mul = _algebra(P[0])
    new = [mul(P[0], P[0])]
    for k in range(1, family.k_max + 1):
        if variant == "simple":
            acc = mul(P[0], P[k])
            for j in range(k):
                acc = acc + (1.0 / math.factorial(j)) * P[k - j]
        elif variant == "bkv":
            h = k // 2
            if k % 2 == 0:
                acc = mul(P[h], P[h])
            else:
                acc = mul(P[h], P[h + 1]) + (1.0 / math.factorial(h)) * P[h + 1]
            for j in range(h):
                acc = acc + (2.0 / math.factorial(j)) * P[k - j]
        else:
            raise ValueError(f"unknown recursion variant {variant!r}")
        new.append((2.0 ** -k) * acc)
    return PhiFamily(k_max=family.k_max, M=family.M + 1, matrices=new)


def compute_phi_family(A, dt: float, k_max: int, M: int | None = None, r: int = 12,
                       variant: str = "simple") -> PhiFamily:
    """p_k^M(dt*A) for k = 0..k_max by scaling and repeated doubling."""
    if M is None:
        M = choose_scaling_exponent(A, dt)
    poly = build_poly(r)
    scale = dt / 2.0 ** M
    X = scale * A if isinstance(A, BandedMatrix) else scale * np.asarray(A)
    fam = phi_family_init(poly, X, k_max)
    for _ in range(M):
        fam = phi_family_recurse(fam, variant)
    return fam


def compute_phi1(A: BandedMatrix, dt: float, M: int | None = None, r: int = 12) -> BandedMatrix:
    """phi_1(dt*A) for a banded A.

    Starts from p_0^0, p_1^0 at dt*A/2^M and repeats M times
    ``p_1 <- (p_0 + I) p_1 / 2`` then ``p_0 <- p_0 p_0``.
    """
    if M is None:
        M = choose_scaling_exponent(A, dt)
    fam = phi_family_init(build_poly(r), (dt / 2.0 ** M) * A, 1)
    p0, p1 = fam.matrices
    n = A.n
    for it in range(M):
        if 2 * p0.lower + 2 * p0.upper + 1 > _DENSE_FRACTION * n:
            # bands are about to fill up: finish on plain arrays, convert once
            d0, d1 = p0.to_dense(), p1.to_dense()
            l0, u0, l1, u1 = p0.lower, p0.upper, p1.lower, p1.upper
            for _ in range(it, M):
                d1 = 0.5 * (d0 @ d1 + d1)
                d0 = d0 @ d0
                l1, u1 = min(l1 + l0, n - 1), min(u1 + u0, n - 1)
                l0, u0 = min(2 * l0, n - 1), min(2 * u0, n - 1)
            return BandedMatrix.from_dense(d1, l1, u1)
        p1 = 0.5 * banded_matmul(p0.add_identity(1.0), p1)
        p0 = banded_matmul(p0, p0)
    return p1


def _bcast_stack(v):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1, 1))


def phi_dense_oracle(k: int, A, max_dim: int = 64) -> np.ndarray:
    """Reference phi_k(A) for small dense matrices (or stacks of them).

    Scales so that the infinity norm is <= 1/16, sums a degree-20 series for
    phi_0..phi_k and squares back with the doubling identity.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    if A.shape[-2] != n:
        raise ValueError("matrix must be square")
    if n > max_dim:
        raise ValueError(f"dimension {n} exceeds oracle guard {max_dim}")
    # each matrix of a stack gets its own scaling so results do not depend on batch-mates
    nrm = np.abs(A).sum(axis=-1).max(axis=-1) if A.size else np.zeros(A.shape[:-2])
    S = np.where(nrm > 2.0 ** -4, np.ceil(np.log2(np.maximum(nrm, 1e-300) / 2.0 ** -4)), 0)
    S = S.astype(int)
    X = A / _bcast_stack(2.0 ** S)
    eye = np.broadcast_to(np.eye(n), A.shape)
    deg = 20 + k
    phis = [None] * (k + 1)
    b = eye / math.factorial(deg)
    for j in range(deg - 1, -1, -1):
        if j + 1 <= k:
            phis[j + 1] = b
        b = X @ b + eye / math.factorial(j)
    phis[0] = b
    s_max = int(S.max()) if S.size else 0
    for s in range(s_max):
        new = [phis[0] @ phis[0]]
        for kk in range(1, k + 1):
            acc = phis[0] @ phis[kk]
            for j in range(kk):
                acc = acc + phis[kk - j] / math.factorial(j)
            new.append(acc / 2.0 ** kk)
        if S.ndim == 0:
            phis = new
        else:
            # a matrix needing S_b doublings only joins in the last S_b rounds
            act = _bcast_stack(S >= s_max - s) > 0
            phis = [np.where(act, a, b_) for a, b_ in zip(new, phis)]
    return phis[k]


def choose_scaling_exponent(A, dt: float, theta: float = 1.0) -> int:
    """Smallest M >= 0 with ||dt*A||_inf / 2**M <= theta (boundary inclusive)."""
    if isinstance(A, BandedMatrix):
        nrm = abs(dt) * A.norm_inf()
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        nrm = abs(dt) * float(np.abs(A).sum(axis=-1).max())
    if nrm <= theta:
        return 0
    M = max(0, int(math.ceil(math.log2(nrm / theta))))
    while nrm / 2.0 ** M > theta:
        M += 1
    while M > 0 and nrm / 2.0 ** (M - 1) <= theta:
        M -= 1
    return M


def error_bound(poly: PhiPolynomial, z_abs, k: int, M: int) -> float:
    """c_q exp(rho0) |z|^(r+1-k) 2^(-M r): bound on |p_k^M(z) - phi_k(z)|."""
    return poly.c_q * math.exp(poly.rho0) * np.abs(z_abs) ** (poly.r + 1 - k) * 2.0 ** (-M * poly.r)
