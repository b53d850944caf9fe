"""Intrinsic linear algebra for maps between oriented inner-product spaces.

A linear map ``V -> W`` is stored as its matrix ``A`` in arbitrary (not
necessarily orthonormal) bases, with ``G`` and ``H`` the Gram matrices of the
inner products on ``V`` and ``W`` in those bases.  Everything here is a pure
function of its arguments and accepts stacks of matrices with shape
``(..., d, d)``; scalars come back with shape ``(...)``.

Conventions
-----------
``A[alpha, i]`` is the image component ``alpha`` of the basis vector ``i``, so
for a differential ``A[alpha, i] = d f^alpha / d x^i``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, DomainError

SYM_RTOL = 1e-12
EIG_RTOL = 1e-12


class SignedSingularValues(NamedTuple):
    """Ascending singular values and the orientation-signed smallest one."""

    sigma: np.ndarray
    signed_first: np.ndarray


def _square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def _same_dim(*mats):
    d = mats[0].shape[-1]
    for M in mats[1:]:
        if M.shape[-1] != d:
            raise DimensionError(f"dimension mismatch: {d} vs {M.shape[-1]}")
    return d


def check_metric(G, name="G"):
    """Return ``G`` as a float array after checking it is symmetric positive-definite.

    Raises
    ------
    DomainError
        If ``G`` is not symmetric to ``1e-12`` relative or has an eigenvalue
        below ``1e-12 * trace``.
    """
    G = _square(G, name)
    scale = np.max(np.abs(G), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(G - np.swapaxes(G, -1, -2)), axis=(-2, -1), keepdims=True)
    if np.any(asym > SYM_RTOL * scale):
        raise DomainError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(G)
    tr = np.trace(G, axis1=-2, axis2=-1)
    if np.any(w[..., 0] <= EIG_RTOL * np.abs(tr)) or np.any(tr <= 0):
        raise DomainError(f"{name} is not positive definite")
    return G


def _spd_eig(G):
    G = check_metric(G)
    w, V = np.linalg.eigh(0.5 * (G + np.swapaxes(G, -1, -2)))
    if np.any(w[..., 0] <= EIG_RTOL * np.sum(w, axis=-1)):
        raise DomainError("metric is not positive definite")
    return w, V


def spd_sqrt(G):
    """Unique symmetric positive-definite square root of an SPD matrix."""
    w, V = _spd_eig(G)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def spd_inv_sqrt(G):
    """Inverse of :func:`spd_sqrt`, computed from the same eigendecomposition."""
    w, V = _spd_eig(G)
    return (V / np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def matrix_cofactor(A):
    """Classical cofactor matrix, ``A @ cof(A).T == det(A) * I``.

    Explicit minor formulas for ``d <= 3``; for larger ``d`` each minor is an
    LU determinant of the corresponding submatrix.  Defined for singular ``A``.
    """
    A = _square(A)
    d = A.shape[-1]
    if d == 1:
        return np.ones_like(A)
    if d == 2:
        C = np.empty_like(A)
        C[..., 0, 0] = A[..., 1, 1]
        C[..., 0, 1] = -A[..., 1, 0]
        C[..., 1, 0] = -A[..., 0, 1]
        C[..., 1, 1] = A[..., 0, 0]
        return C
    if d == 3:
        r0, r1, r2 = A[..., 0, :], A[..., 1, :], A[..., 2, :]
        return np.stack(
            [np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2
        )
    C = np.empty_like(A)
    idx = np.arange(d)
    for i in range(d):
        rows = idx[idx != i]
        for j in range(d):
            cols = idx[idx != j]
            minor = A[..., rows[:, None], cols[None, :]]
            C[..., i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return C


def intrinsic_transpose(A, G, H):
    """Adjoint of ``A`` with respect to ``G`` on the source and ``H`` on the target.

    ``A^T = G^{-1} A^t H``, so that ``<A v, w>_H = <v, A^T w>_G``.
    """
    A, G, H = _square(A), _square(G, "G"), _square(H, "H")
    _same_dim(A, G, H)
    return np.linalg.solve(G, np.swapaxes(A, -1, -2) @ H)


def volume_ratio(G, H):
    """``sqrt(det H / det G)``: the factor converting matrix to intrinsic determinants."""
    return np.sqrt(np.linalg.det(H) / np.linalg.det(G))


def intrinsic_det(A, G, H):
    """Intrinsic determinant ``sqrt(det H / det G) * det A``."""
    A = _square(A)
    G, H = check_metric(G, "G"), check_metric(H, "H")
    _same_dim(A, G, H)
    return volume_ratio(G, H) * np.linalg.det(A)


def intrinsic_cof(A, G, H):
    """Intrinsic cofactor ``sqrt(det H / det G) * H^{-1} cof(A) G``.

    Satisfies ``A^T Cof A = Det A * I`` for the metric adjoint ``A^T``.
    """
    A = _square(A)
    G, H = check_metric(G, "G"), check_metric(H, "H")
    _same_dim(A, G, H)
    s = volume_ratio(G, H)[..., None, None]
    return s * np.linalg.solve(H, matrix_cofactor(A) @ G)


def signed_singular_values(B) -> SignedSingularValues:
    """Singular values in ascending order, with the smallest carrying ``sgn(det B)``.

    ``det B >= 0`` counts as positive.
    """
    B = _square(B, "B")
    sigma = np.linalg.svd(B, compute_uv=False)[..., ::-1]
    sign = np.where(np.linalg.det(B) < 0, -1.0, 1.0)
    return SignedSingularValues(sigma, sign * sigma[..., 0])


def so_distance(B):
    """Frobenius distance from ``B`` to SO(d), via signed singular values."""
    ssv = signed_singular_values(B)
    rest = np.sum((ssv.sigma[..., 1:] - 1.0) ** 2, axis=-1)
    return np.sqrt((ssv.signed_first - 1.0) ** 2 + rest)


def nearest_rotation(B):
    """A closest element of SO(d) to ``B`` in the Frobenius norm.

    Unique unless ``det B < 0`` and the two smallest singular values coincide.
    """
    B = _square(B, "B")
    U, _, Vt = np.linalg.svd(B)
    s = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= s[..., None]
    return U @ Vt


def frame_matrix(A, G, H):
    """``sqrt(H) A sqrt(G)^{-1}``: ``A`` expressed in orthonormal frames."""
    A = _square(A)
    _same_dim(A, _square(G, "G"), _square(H, "H"))
    return spd_sqrt(H) @ A @ spd_inv_sqrt(G)


def dist_to_so(A, G, H):
    """Distance of ``A`` from the orientation-preserving isometries SO(G, H).

    Computed as the Euclidean distance of ``sqrt(H) A sqrt(G)^{-1}`` from
    SO(d), ``sqrt((r_1 - 1)^2 + sum_{i>=2} (sigma_i - 1)^2)`` with
    ``r_1 = sgn(det) sigma_1``.
    """
    return so_distance(frame_matrix(A, G, H))


def pairing(A, B, G, H):
    """Inner product ``tr(G^{-1} A^t H B)`` on Hom(V, W)."""
    A, B = _square(A), _square(B, "B")
    G, H = _square(G, "G"), _square(H, "H")
    _same_dim(A, B, G, H)
    M = np.linalg.solve(G, np.swapaxes(A, -1, -2) @ H @ B)
    return np.trace(M, axis1=-2, axis2=-1)


def det_directional_derivative(A, dA, G, H):
    """Derivative of ``intrinsic_det`` at ``A`` in direction ``dA`` with frozen metrics.

    Equals ``<Cof A, dA>``.
    """
    return pairing(intrinsic_cof(A, G, H), dA, G, H)


def volume_bound_sides(A, G, H):
    """Both sides of ``|Det A - 1| <= (dist(A, SO) + 1)^d - 1``.

    Returns
    -------
    lhs, rhs : ndarray
    """
    A = _square(A)
    d = A.shape[-1]
    lhs = np.abs(intrinsic_det(A, G, H) - 1.0)
    rhs = (dist_to_so(A, G, H) + 1.0) ** d - 1.0
    return lhs, rhs


def random_spd(rng, d, size=(), cond=10.0):
    """Random SPD matrices with eigenvalues spread over ``[1, cond]`` times a random scale."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    Q = np.linalg.qr(rng.standard_normal(shape + (d, d)))[0]
    w = np.exp(rng.uniform(0.0, np.log(cond), shape + (d,)))
    w *= np.exp(rng.uniform(-1.0, 1.0, shape + (1,)))
    return (Q * w[..., None, :]) @ np.swapaxes(Q, -1, -2)


def random_rotation(rng, d, size=()):
    """Haar-distributed random elements of SO(d)."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    Z = rng.standard_normal(shape + (d, d))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 0] *= -1.0
    return Q
