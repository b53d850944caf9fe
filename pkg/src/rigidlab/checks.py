"""Randomized property suites for the intrinsic linear algebra.

Each suite draws a batch of random instances from a seeded generator and
returns a :class:`SuiteResult`.  They back the ``check-algebra`` command and
the acceptance tests.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import algebra as al


@dataclass
class SuiteResult:
    name: str
    dim: int
    cases: int
    failures: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _result(name, d, err, tol):
    err = np.asarray(err, dtype=float)
    bad = ~(err <= tol)
    return SuiteResult(name, d, int(err.size), int(np.count_nonzero(bad)),
                       float(np.max(err)) if err.size else 0.0, tol)


def _fro(M):
    return np.sqrt(np.einsum("...ij,...ij->...", M, M))


def _instances(rng, d, n):
    A = rng.standard_normal((n, d, d))
    G = al.random_spd(rng, d, n)
    H = al.random_spd(rng, d, n)
    return A, G, H


def cofactor_identity(rng, d=2, n=10_000, rtol=1e-9):
    """``A^T Cof A = Det A I = (Cof A)^T A``, relative to ``|A^T| |Cof A|``."""
    A, G, H = _instances(rng, d, n)
    C = al.intrinsic_cof(A, G, H)
    D = al.intrinsic_det(A, G, H)
    At = al.intrinsic_transpose(A, G, H)
    Ct = al.intrinsic_transpose(C, G, H)
    eye = np.eye(d)
    left = At @ C - D[:, None, None] * eye
    right = Ct @ A - D[:, None, None] * eye
    scale = np.maximum(_fro(At) * _fro(C), np.finfo(float).tiny)
    err = np.maximum(_fro(left), _fro(right)) / scale
    return _result("cofactor_identity", d, err, rtol)


def so_characterization(rng, d=2, n=10_000, tol=1e-9, gap=1e-3):
    """``Det A = 1`` and ``Cof A = A`` exactly on SO(G, H), and not both off it.

    Returns two results: the forward direction on constructed isometries,
    and the converse on random maps whose distortion exceeds 0.1.
    """
    G = al.random_spd(rng, d, n)
    H = al.random_spd(rng, d, n)
    R = al.random_rotation(rng, d, n)
    A = al.spd_inv_sqrt(H) @ R @ al.spd_sqrt(G)
    C = al.intrinsic_cof(A, G, H)
    D = al.intrinsic_det(A, G, H)
    err = np.maximum(np.abs(D - 1.0), _fro(C - A) / _fro(A))
    forward = _result("so_isometries", d, err, tol)

    B, G2, H2 = _instances(rng, d, n)
    dist = al.dist_to_so(B, G2, H2)
    keep = dist > 0.1
    B, G2, H2 = B[keep], G2[keep], H2[keep]
    miss = np.maximum(np.abs(al.intrinsic_det(B, G2, H2) - 1.0),
                      _fro(al.intrinsic_cof(B, G2, H2) - B) / _fro(B))
    # a failure is a non-isometry that passes both tests; report the margin as "error"
    converse = _result("so_converse", d, gap / np.maximum(miss, 1e-300), 1.0)
    return forward, converse


def det_derivative(rng, d=2, n=1_000, step=1e-5, rtol=1e-6):
    """``<Cof A, dA>`` against central differences of ``Det``."""
    A, G, H = _instances(rng, d, n)
    dA = rng.standard_normal((n, d, d))
    exact = al.det_directional_derivative(A, dA, G, H)
    fd = (al.intrinsic_det(A + step * dA, G, H) - al.intrinsic_det(A - step * dA, G, H)) / (2 * step)
    err = np.abs(fd - exact) / np.abs(exact)
    return _result("det_derivative", d, err, rtol)


def volume_bound(rng, d=2, n=10_000, slack=1e-9):
    """``|Det A - 1| <= (dist + 1)^d - 1``; the recorded error is ``lhs - rhs``."""
    A, G, H = _instances(rng, d, n)
    lhs, rhs = al.volume_bound_sides(A, G, H)
    return _result("volume_bound", d, lhs - rhs, slack)


def _random_frame(rng, d, n):
    """Random invertible matrices with positive determinant and moderate condition."""
    Q = al.random_rotation(rng, d, n)
    w = np.exp(rng.uniform(-1.0, 1.0, (n, d)))
    return (Q * w[:, None, :]) @ al.random_rotation(rng, d, n)


def frame_invariance(rng, d=2, n=10_000, tol=1e-10):
    """``Det`` and ``dist`` unchanged under ``A -> Q^-1 A P``, ``G -> P^t G P``, ``H -> Q^t H Q``."""
    A, G, H = _instances(rng, d, n)
    P, Q = _random_frame(rng, d, n), _random_frame(rng, d, n)
    A2 = np.linalg.solve(Q, A @ P)
    G2 = np.swapaxes(P, -1, -2) @ G @ P
    H2 = np.swapaxes(Q, -1, -2) @ H @ Q
    G2 = 0.5 * (G2 + np.swapaxes(G2, -1, -2))
    H2 = 0.5 * (H2 + np.swapaxes(H2, -1, -2))
    d1, d2 = al.intrinsic_det(A, G, H), al.intrinsic_det(A2, G2, H2)
    s1, s2 = al.dist_to_so(A, G, H), al.dist_to_so(A2, G2, H2)
    err = np.maximum(np.abs(d1 - d2) / (1.0 + np.abs(d1)), np.abs(s1 - s2) / (1.0 + s1))
    return _result("frame_invariance", d, err, tol)


def run_all(seed=42, d=2, cases=10_000, fd_cases=1_000, rtol=1e-9):
    """Every suite in dimension ``d``; each draws from its own child generator."""
    seeds = np.random.SeedSequence([int(seed), int(d)]).spawn(5)
    rngs = [np.random.default_rng(s) for s in seeds]
    results = [cofactor_identity(rngs[0], d, cases, rtol)]
    results.extend(so_characterization(rngs[1], d, cases, rtol))
    results.append(det_derivative(rngs[2], d, fd_cases))
    results.append(volume_bound(rngs[3], d, cases))
    results.append(frame_invariance(rngs[4], d, cases))
    return results
