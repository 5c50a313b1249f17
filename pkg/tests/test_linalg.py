import numpy as np
import pytest
import scipy.sparse as sp

from saddlemg.linalg import (
    DenseLU,
    SingularMatrixError,
    dense_solve,
    dense_sym_eig,
    generalized_sym_eig,
    power_iteration,
    spmv,
    spmv_transpose,
)


def test_spmv_small():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
    assert np.allclose(spmv(A, np.ones(2)), [3.0, 3.0])
    assert np.allclose(spmv(sp.identity(4, format="csr"), np.arange(4.0)), np.arange(4.0))
    assert not spmv(sp.csr_matrix((3, 3)), np.ones(3)).any()


def test_spmv_shape_mismatch():
    with pytest.raises(ValueError):
        spmv(sp.identity(3, format="csr"), np.ones(2))
    with pytest.raises(ValueError):
        spmv_transpose(sp.csr_matrix((3, 2)), np.ones(2))


def test_transpose_adjoint():
    rng = np.random.default_rng(0)
    A = sp.random(7, 5, density=0.4, random_state=1, format="csr")
    x, y = rng.standard_normal(7), rng.standard_normal(5)
    assert abs(spmv_transpose(A, x) @ y - x @ spmv(A, y)) < 1e-14
    assert np.allclose(spmv_transpose(sp.csr_matrix(np.ones((1, 4))), np.ones(1)), np.ones(4))
    S = A.T @ A
    assert np.allclose(spmv_transpose(S, y), spmv(S, y))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_dense_solve():
    assert np.allclose(dense_solve(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    A = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [2.0, 0.0, 5.0]])
    x = np.array([1.0, -2.0, 3.0])
    assert np.allclose(dense_solve(A, A @ x), x)
    with pytest.raises(SingularMatrixError):
        dense_solve(np.array([[1.0, 2.0], [0.0, 0.0]]), [1.0, 1.0])


def test_dense_lu_reuse_and_errors():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    lu = DenseLU(A)
    B = rng.standard_normal((6, 3))
    X = lu.solve(B)
    assert np.linalg.norm(A @ X - B) <= 1e-12 * (np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(B))
    with pytest.raises(ValueError):
        DenseLU(np.ones((2, 3)))
    with pytest.raises(ValueError):
        DenseLU(np.zeros((0, 0)))


def test_sym_eig():
    assert np.allclose(dense_sym_eig(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    assert np.allclose(dense_sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]])), [1, 3])
    rng = np.random.default_rng(3)
    R = rng.standard_normal((5, 5))
    S = R + R.T
    assert abs(dense_sym_eig(S).sum() - np.trace(S)) < 1e-12
    lam, V = dense_sym_eig(S, vectors=True)
    assert np.linalg.norm(S @ V - V * lam) <= 1e-10 * np.linalg.norm(S)
    with pytest.raises(ValueError):
        dense_sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_generalized_eig():
    rng = np.random.default_rng(4)
    R = rng.standard_normal((4, 4))
    B = R @ R.T + 4 * np.eye(4)
    A = R + R.T
    assert np.allclose(generalized_sym_eig(A, np.eye(4)), np.linalg.eigvalsh(A))
    assert np.allclose(generalized_sym_eig(B, B), 1.0)
    assert np.allclose(generalized_sym_eig(2 * B, B), 2.0)
    with pytest.raises(ValueError):
        generalized_sym_eig(A, -B)


def test_power_iteration():
    A = np.diag([1.0, 5.0, 2.0])
    lam, v = power_iteration(lambda x: A @ x, np.ones(3), iterations=500)
    assert abs(lam - 5.0) < 1e-8
    assert abs(abs(v[1]) - 1.0) < 1e-6
