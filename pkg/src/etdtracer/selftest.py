"""Quick numerical self-check of the phi machinery, used by ``etdtracer phi-selftest``."""
from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from .krylov_phi import restarted_phi_apply
from .phi_core import (
    BandedMatrix,
    build_poly,
    compute_phi1,
    compute_phi_family,
    phi_dense_oracle,
    phi_family_init,
    phi_family_recurse,
    phi_scalar,
)


def _check(name, err, tol) -> Tuple[str, bool, str]:
    return name, bool(err <= tol), f"max error {err:.2e} (tol {tol:.0e})"


def phi_selftest(seed: int = 0) -> List[Tuple[str, bool, str]]:
    """Run the checks; returns (name, passed, detail) triples."""
    rng = np.random.default_rng(seed)
    results = []

    zs = np.concatenate([rng.uniform(-20, 2, 40), rng.uniform(-2, 2, 20) + 1j * rng.uniform(-2, 2, 20)])
    err = 0.0
    for z in zs:
        for k in range(0, 5):
            lhs = 2 ** k * phi_scalar(k, 2 * z)
            rhs = np.exp(z) * phi_scalar(k, z) + sum(phi_scalar(k - j, z) / math.factorial(j)
                                                      for j in range(k))
            err = max(err, abs(lhs - rhs) / max(1.0, abs(lhs)))
    results.append(_check("scalar doubling recursion", err, 1e-12))

    poly = build_poly(12)
    z = rng.uniform(-1, 1, 64)
    fam = phi_family_init(poly, z, 4)
    err = max(abs(z * fam[k + 1] + 1.0 / math.factorial(k) - fam[k]).max() for k in range(4))
    results.append(_check("polynomial family identity z p_{k+1} + 1/k! = p_k", err, 1e-10))

    n = 12
    A = BandedMatrix.from_diagonals({-1: rng.uniform(0, 3, n - 1), 0: -rng.uniform(1, 6, n),
                                     1: rng.uniform(0, 1, n - 1)})
    dense = A.to_dense()
    for dt in (0.1, 1.0, 5.0):
        ref = phi_dense_oracle(1, dt * dense)
        err = np.abs(compute_phi1(A, dt).to_dense() - ref).max()
        results.append(_check(f"banded phi_1 vs dense oracle, dt={dt:g}", err, 1e-10))
    simple = compute_phi_family(A, 5.0, 3)
    bkv = compute_phi_family(A, 5.0, 3, variant="bkv")
    err = max(np.abs(simple[k].to_dense() - bkv[k].to_dense()).max() for k in range(4))
    results.append(_check("doubling variants agree", err, 1e-12))

    b = rng.normal(size=n)
    x = restarted_phi_apply(lambda v: 5.0 * dense @ v, b, 1, 4, max_cycles=30, tol=1e-13)
    err = np.abs(x - phi_dense_oracle(1, 5.0 * dense) @ b).max()
    results.append(_check("restarted Krylov phi_1 b vs dense oracle", err, 1e-10))
    return results
