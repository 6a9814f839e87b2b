"""Dense symmetric-matrix kernels.

Everything here works on plain ``numpy`` arrays. Dimensions in this package
stay small (N <= 100), so O(N^3) LAPACK calls per generation are cheap.
"""

from typing import NamedTuple

import numpy as np

from .exceptions import NotPositiveDefinite


def symmetrize(A):
    """Return ``(A + A.T) / 2`` as a new float array.

    The result is exactly symmetric: entry (i, j) and (j, i) are computed
    from the same two operands in the same order.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    # IEEE addition commutes and halving is exact, so S == S.T bitwise
    return 0.5 * (A + A.T)


def cholesky(A):
    """Lower-triangular ``L`` with ``L @ L.T == A``.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is not strictly positive, i.e. ``A`` is not PD. For a
        covariance matrix this means the search distribution collapsed.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


class InvSqrt(NamedTuple):
    matrix: np.ndarray
    clamped: bool


def default_eig_floor(A):
    """Scale-relative eigenvalue floor, ``1e-30 * trace(A) / dim``."""
    A = np.asarray(A, dtype=float)
    # tiny guards the all-zero matrix, where the relative floor is 0
    return max(1e-30 * abs(np.trace(A)) / A.shape[0], np.finfo(float).tiny)


def inv_sqrt_sym(A, eig_floor=None):
    """Symmetric inverse square root of a symmetric matrix.

    Eigenvalues below ``eig_floor`` are raised to it before inversion, which
    makes the function total. The returned ``clamped`` flag tells whether
    that happened.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Symmetric matrix. Only the lower triangle is read.
    eig_floor : float, optional
        Defaults to :func:`default_eig_floor` of ``A``.

    Returns
    -------
    InvSqrt
        ``(matrix, clamped)`` where ``matrix @ A @ matrix`` is the identity
        for PD input.
    """
    A = np.asarray(A, dtype=float)
    if eig_floor is None:
        eig_floor = default_eig_floor(A)
    w, Q = np.linalg.eigh(A)
    return inv_sqrt_from_eigh(w, Q, eig_floor)


def inv_sqrt_from_eigh(w, Q, eig_floor):
    """:func:`inv_sqrt_sym` from a precomputed ``eigh`` result ``(w, Q)``."""
    clamped = bool(np.any(w < eig_floor))
    if clamped:
        w = np.maximum(w, eig_floor)
    B = (Q / np.sqrt(w)) @ Q.T
    return InvSqrt(symmetrize(B), clamped)


def min_eigenvalue(A):
    """Smallest eigenvalue of a symmetric matrix, unclamped."""
    return float(np.linalg.eigvalsh(np.asarray(A, dtype=float))[0])
