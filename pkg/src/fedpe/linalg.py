"""Symmetric linear algebra for rank-deficient PSD matrices.

Pseudo-inverse and log pseudo-determinant via eigendecomposition, the
rank-one pseudo-inverse update, numerical rank of vector sets and the
partition of a vector set into collinearity classes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

_EPS = np.finfo(float).eps


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class SingularUpdateError(ArithmeticError):
    """A rank-one update would change the range of the matrix."""


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    scale = np.maximum(1.0, np.abs(A))
    if np.any(np.abs(A - A.T) > 1e-10 * scale):
        raise InvalidInputError("matrix is not symmetric")
    return A


def default_tol(eigvals: np.ndarray, dim: int) -> float:
    """``dim * eps * spectral_norm``, the default zero-eigenvalue cutoff."""
    if eigvals.size == 0:
        return 0.0
    return dim * _EPS * float(np.max(np.abs(eigvals)))


def _eig_sym(A: np.ndarray, tol: float | None):
    w, U = np.linalg.eigh(A)
    cut = default_tol(w, A.shape[0]) if tol is None else tol
    keep = w > cut
    return w[keep], U[:, keep]


def pinv(A, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues at or below `tol` (default ``dim * eps * ||A||``) are
    treated as exact zeros. Raises :class:`InvalidInputError` for
    non-symmetric input.
    """
    A = _check_symmetric(A)
    return _pinv_sym(A, tol)


def _pinv_sym(A: np.ndarray, tol: float | None = None) -> np.ndarray:
    w, U = _eig_sym(A, tol)
    P = (U / w) @ U.T
    return 0.5 * (P + P.T)


def pinv_stack(A: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverses and ranks of a stack of symmetric matrices ``(n, d, d)``."""
    A = np.asarray(A, dtype=float)
    w, U = np.linalg.eigh(A)
    d = A.shape[-1]
    if tol is None:
        cut = d * _EPS * np.max(np.abs(w), axis=-1, keepdims=True)
    else:
        cut = np.full(w.shape[:-1] + (1,), tol)
    keep = w > cut
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    P = np.einsum("...ik,...k,...jk->...ij", U, inv_w, U)
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return P, keep.sum(axis=-1)


def log_pdet(A, tol: float | None = None) -> float:
    """Log of the product of the eigenvalues of `A` above `tol`.

    A rank-zero matrix has the empty product, so the result is 0.
    """
    A = _check_symmetric(A)
    w, _ = _eig_sym(A, tol)
    return float(np.sum(np.log(w)))


def matrix_rank_sym(A, tol: float | None = None) -> int:
    A = _check_symmetric(A)
    w, _ = _eig_sym(A, tol)
    return int(w.size)


def pinv_rank1_update(A_pinv, u, lam: float, *, check_range: bool = False):
    """Pseudo-inverse of ``A + lam * u u^T`` from ``A^+``.

    Valid when `u` lies in range(A) and the update keeps the range fixed.
    Returns ``(new_pinv, factor)`` with ``factor = 1 + lam * u^T A^+ u``,
    the multiplier of the pseudo-determinant.

    Raises
    ------
    SingularUpdateError
        If ``factor <= 1e-12``, i.e. the update would collapse a dimension.
    InvalidInputError
        If `check_range` is set and `u` is not in range(A).
    """
    A_pinv = np.asarray(A_pinv, dtype=float)
    u = np.asarray(u, dtype=float)
    if check_range:
        A_pinv = _check_symmetric(A_pinv)
        _, U = _eig_sym(A_pinv, None)
        resid = u - U @ (U.T @ u)
        if np.linalg.norm(resid) > 1e-8 * max(np.linalg.norm(u), 1e-300):
            raise InvalidInputError("u is not in the range of A")
    Au = A_pinv @ u
    factor = 1.0 + lam * float(u @ Au)
    if factor <= 1e-12:
        raise SingularUpdateError(f"update denominator {factor:.3e} is not positive")
    if lam == 0.0:
        return A_pinv.copy(), 1.0
    new = A_pinv - (lam / factor) * np.outer(Au, Au)
    return new, factor


def rank_of_set(vectors: Sequence, tol: float | None = None) -> int:
    """Number of singular values of the stacked vectors above `tol`."""
    if len(vectors) == 0:
        return 0
    X = np.atleast_2d(np.asarray(vectors, dtype=float))
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0:
        return 0
    cut = max(X.shape) * _EPS * s[0] if tol is None else tol
    return int(np.sum(s > cut))


def collinearity_classes(vectors: Sequence, tol: float = 1e-9) -> list[list[int]]:
    """Partition `vectors` into classes of the collinear relation.

    Two vectors are collinear when some subset S excludes x from its span
    while S plus y spans x; equivalently both lie on a common minimal
    dependent subset. Classes are found as connected components of the
    fundamental circuits with respect to a greedily chosen basis, which
    gives the same partition without enumerating subsets.

    Returns index lists, each sorted, ordered by smallest member.
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = X.shape[0]
    if n == 0 or len(vectors) == 0:
        raise InvalidInputError("collinearity_classes needs a nonempty list")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise InvalidInputError(f"vector {bad} is zero")
    Xn = X / norms[:, None]

    # greedy basis by Gram-Schmidt residuals
    basis: list[int] = []
    Q = np.zeros((X.shape[1], 0))
    for k in range(n):
        r = Xn[k] - Q @ (Q.T @ Xn[k])
        r -= Q @ (Q.T @ r)
        nr = np.linalg.norm(r)
        if nr > tol:
            basis.append(k)
            Q = np.column_stack([Q, r / nr])

    rows, cols = [], []
    if basis:
        B = Xn[basis].T
        others = [k for k in range(n) if k not in set(basis)]
        if others:
            coef, *_ = np.linalg.lstsq(B, Xn[others].T, rcond=None)
            for j, k in enumerate(others):
                for b_pos in np.flatnonzero(np.abs(coef[:, j]) > tol):
                    rows.append(k)
                    cols.append(basis[b_pos])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)

    groups: dict[int, list[int]] = {}
    for k, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(k)
    return sorted(groups.values(), key=lambda g: g[0])
