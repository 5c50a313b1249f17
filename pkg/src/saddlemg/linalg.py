"""Thin sparse/dense linear algebra layer over numpy and scipy."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "SingularMatrixError",
    "as_csr",
    "spmv",
    "spmv_transpose",
    "DenseLU",
    "dense_solve",
    "dense_sym_eig",
    "generalized_sym_eig",
    "power_iteration",
]


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, duplicates summed."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} @ {x.shape}")
    return A @ x


def spmv_transpose(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[0] != x.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape}^T @ {x.shape}")
    return A.T @ x


class DenseLU:
    """LU factorization with partial pivoting, reusable for many right-hand sides.

    The matrix is rejected as singular when a pivot falls below
    ``rtol * max|A|``.
    """

    def __init__(self, A: np.ndarray, rtol: float = 1e-14):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        if A.size == 0:
            raise ValueError("empty matrix")
        scale = np.abs(A).max()
        self.lu, self.piv = sla.lu_factor(A, check_finite=True)
        if np.abs(np.diag(self.lu)).min() <= rtol * scale:
            raise SingularMatrixError("matrix is singular to working precision")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), b)


def dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return DenseLU(A).solve(np.asarray(b, dtype=float))


def _check_symmetric(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.abs(A).max(initial=0.0), 1e-300)
    if np.abs(A - A.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def dense_sym_eig(A: np.ndarray, vectors: bool = False):
    """Eigenvalues (ascending) of a symmetric matrix, optionally with vectors."""
    A = _check_symmetric(A)
    if vectors:
        return np.linalg.eigh(A)
    return np.linalg.eigvalsh(A)


def generalized_sym_eig(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``B^{-1} A`` for symmetric A and SPD B, ascending.

    Uses the Cholesky reduction ``L^{-1} A L^{-T}`` with ``B = L L^T``.
    """
    A = _check_symmetric(A, "A")
    B = _check_symmetric(B, "B")
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise ValueError("B is not symmetric positive definite") from exc
    X = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (C + C.T))


def power_iteration(apply, x0: np.ndarray, iterations: int = 200, tol: float = 1e-12):
    """Dominant eigenvalue magnitude of a linear map via power iteration.

    Returns ``(estimate, vector)``. ``apply`` maps a vector to a vector.
    """
    x = np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    lam = 0.0
    for _ in range(iterations):
        y = apply(x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, x
        new = float(x @ y)
        x = y / ny
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            lam = new
            break
        lam = new
    return lam, x
