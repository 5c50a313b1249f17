"""Dense checks of the subspace-correction convergence theory on small hierarchies.

All quantities live in the divergence-free subspace of the finest level,
written in the basis ``Z`` of finest patch kernel vectors: a kernel flux is
``Z z`` and its energy norm is ``z.A z`` with ``A = Z^T M Z``. The
decomposition consists of the one-dimensional spans of the patch kernel
vectors of every level, prolongated to the finest mesh, visited in sweep
order (finest level first, ascending patch index within a level).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .hierarchy import MeshHierarchy, patch_kernel_matrix
from .linalg import dense_sym_eig, generalized_sym_eig
from .mixed_fem import CoefficientTensor
from .saddle_mg import Multilevel, SolverConfig, build_multilevel, energy, measure_contraction

__all__ = [
    "KernelBasis",
    "TheoryEstimates",
    "kernel_basis",
    "estimate_CA",
    "estimate_CS",
    "compute_c0_xz",
    "sweep_operator",
    "sweep_norm2",
    "patch_condition_numbers",
    "inexact_rate",
    "verify_bound",
    "energy",
    "MAX_KERNEL_DIM",
]

MAX_KERNEL_DIM = 60


@dataclass(eq=False)
class KernelBasis:
    """Ordered one-dimensional subspaces of the global kernel.

    ``X[:, i]`` holds the finest-kernel coordinates of the i-th spanning
    vector, so the flux vectors are ``Z @ X``.
    """

    X: np.ndarray  # (n, N)
    A: np.ndarray  # (n, n) kernel energy matrix
    Z: np.ndarray | None = None  # (E, n) finest kernel vectors, if known
    levels: np.ndarray | None = None  # level of each column

    @classmethod
    def from_columns(cls, Y: np.ndarray, A: np.ndarray) -> "KernelBasis":
        """Basis given directly in coordinates where the energy matrix is ``A``."""
        return cls(np.asarray(Y, float), np.asarray(A, float))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def gram(self) -> np.ndarray:
        G = self.X.T @ self.A @ self.X
        return 0.5 * (G + G.T)

    def vectors(self) -> np.ndarray:
        if self.Z is None:
            raise ValueError("no flux representation attached")
        return self.Z @ self.X

    def reversed(self) -> "KernelBasis":
        lv = None if self.levels is None else self.levels[::-1]
        return KernelBasis(self.X[:, ::-1].copy(), self.A, self.Z, lv)


def kernel_basis(ml: Multilevel, order: str = "fine_to_coarse") -> KernelBasis:
    """Prolongated patch kernel vectors of all levels of ``ml``."""
    fine = ml.finest
    Zf = patch_kernel_matrix(fine.mesh, fine.patches)
    Zd = Zf.toarray()
    A = (Zf.T @ fine.M @ Zf).toarray()
    A = 0.5 * (A + A.T)
    blocks, levels = [], []
    for k, lev in enumerate(ml.levels):
        Y = patch_kernel_matrix(lev.mesh, lev.patches).toarray()
        for j in range(k + 1, ml.J):
            Y = ml.levels[j].P @ Y
        blocks.append(Y)
        levels.append(np.full(Y.shape[1], k))
    if order == "fine_to_coarse":
        blocks, levels = blocks[::-1], levels[::-1]
    elif order != "coarse_to_fine":
        raise ValueError("order must be 'fine_to_coarse' or 'coarse_to_fine'")
    Y = np.hstack(blocks)
    # Z has full column rank; coordinates by normal equations
    X = np.linalg.solve(Zd.T @ Zd, Zd.T @ Y)
    if np.abs(Zd @ X - Y).max(initial=0.0) > 1e-10 * max(1.0, np.abs(Y).max(initial=0.0)):
        raise np.linalg.LinAlgError("prolongated kernel vector left the finest kernel")
    return KernelBasis(X, A, Zd, np.concatenate(levels))


def _check_dense(basis: KernelBasis):
    if basis.n > MAX_KERNEL_DIM:
        raise ValueError(f"kernel dimension {basis.n} exceeds the dense limit {MAX_KERNEL_DIM}")
    if np.linalg.matrix_rank(basis.X) < basis.n:
        raise np.linalg.LinAlgError("subspaces do not span the kernel")


def _min_decomposition(basis: KernelBasis, Q: np.ndarray) -> np.ndarray:
    """Matrix ``S`` with ``z.S z = min { x.Q x : X x = z }`` (Q symmetric PSD)."""
    X = basis.X
    Xp = np.linalg.pinv(X)
    _, s, Vt = np.linalg.svd(X)
    rank = int((s > s[0] * 1e-12).sum())
    Nul = Vt[rank:].T
    if Nul.shape[1] == 0:
        S = Xp.T @ Q @ Xp
    else:
        QN = Q @ Nul
        H = Nul.T @ QN
        S = Xp.T @ (Q - QN @ np.linalg.pinv(H, rcond=1e-13, hermitian=True) @ QN.T) @ Xp
    return 0.5 * (S + S.T)


def estimate_CA(basis: KernelBasis) -> float:
    """Smallest C with ``min sum ||v_i||^2 <= C ||v||^2`` over decompositions."""
    _check_dense(basis)
    D = np.diag(basis.gram)
    XD = basis.X / D
    S = np.linalg.inv(XD @ basis.X.T)
    return float(generalized_sym_eig(0.5 * (S + S.T), basis.A)[-1])


def _upper_gram(basis: KernelBasis) -> tuple[np.ndarray, np.ndarray]:
    G = basis.gram
    return np.triu(G, 1), np.diag(G)


def estimate_CS(basis: KernelBasis) -> float:
    """Squared spectral norm of the strictly upper normalized Gram matrix."""
    U, d = _upper_gram(basis)
    s = 1.0 / np.sqrt(d)
    Un = U * s[:, None] * s[None, :]
    if not Un.any():
        return 0.0
    return float(np.linalg.norm(Un, 2) ** 2)


def compute_c0_xz(basis: KernelBasis) -> float:
    """``sup_v inf_{sum v_i = v} sum_i ||P_i sum_{j>i} v_j||^2 / ||v||^2``."""
    _check_dense(basis)
    U, d = _upper_gram(basis)
    # (c_i, sum_{j>i} x_j c_j) = (U x)_i and ||P_i w||^2 = (c_i, w)^2 / d_i
    Q = U.T @ (U / d[:, None])
    S = _min_decomposition(basis, 0.5 * (Q + Q.T))
    return float(max(generalized_sym_eig(S, basis.A)[-1], 0.0))


def sweep_operator(basis: KernelBasis) -> np.ndarray:
    """Error propagation ``(I - P_N) ... (I - P_1)`` in kernel coordinates."""
    A = basis.A
    E = np.eye(basis.n)
    for i in range(basis.N):
        x = basis.X[:, i]
        Ax = A @ x
        E = E - np.outer(x, Ax @ E) / (x @ Ax)
    return E


def sweep_norm2(basis: KernelBasis) -> float:
    """``||E||_A^2`` as the top eigenvalue of ``(E^T A E, A)``."""
    E = sweep_operator(basis)
    H = E.T @ basis.A @ E
    return float(generalized_sym_eig(0.5 * (H + H.T), basis.A)[-1])


def patch_condition_numbers(ml: Multilevel) -> np.ndarray:
    """``kappa(diag(M_loc)^{-1} M_loc)`` for every patch of every level."""
    out = []
    for lev in ml.levels:
        for M_loc, _ in lev.local_matrices():
            d = np.sqrt(np.diag(M_loc))
            ev = dense_sym_eig(M_loc / d[:, None] / d[None, :])
            out.append(ev[-1] / ev[0])
    return np.array(out)


def inexact_rate(CA: float, CS: float, kappa: float) -> float:
    """Rate ``1 - 1/(1 + C_A [sqrt(C_S) + (kappa - 1)/2]^2)``."""
    return 1.0 - 1.0 / (1.0 + CA * (math.sqrt(CS) + 0.5 * (kappa - 1.0)) ** 2)


@dataclass
class TheoryEstimates:
    CA: float
    CS: float
    c0: float
    sweep_norm2: float
    rho_measured: float
    rho_inexact: float
    kappa_max: float
    bound_c0: float = field(init=False)
    bound_CACS: float = field(init=False)
    bound_inexact: float = field(init=False)
    kernel_dim: int = 0
    n_subspaces: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        self.bound_c0 = 1.0 - 1.0 / (1.0 + self.c0)
        self.bound_CACS = 1.0 - 1.0 / (1.0 + self.CA * self.CS)
        self.bound_inexact = inexact_rate(self.CA, self.CS, self.kappa_max)

    @property
    def xz_identity_pass(self) -> bool:
        return abs(self.sweep_norm2 - self.bound_c0) <= self.tol

    @property
    def bound_chain_pass(self) -> bool:
        t = self.tol
        return (0.0 <= self.rho_measured < 1.0
                and self.rho_measured <= self.bound_c0 + t
                and self.bound_c0 <= self.bound_CACS + t)

    @property
    def inexact_pass(self) -> bool:
        return (self.rho_inexact <= self.bound_inexact + self.tol
                and self.rho_inexact >= self.rho_measured - 1e-10)

    @property
    def all_pass(self) -> bool:
        return self.xz_identity_pass and self.bound_chain_pass and self.inexact_pass

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(xz_identity_pass=self.xz_identity_pass, bound_chain_pass=self.bound_chain_pass,
                 inexact_pass=self.inexact_pass, all_pass=self.all_pass)
        return d


def verify_bound(hier: MeshHierarchy, K: CoefficientTensor | None = None, seed: int = 0,
                 iterations: int = 60) -> TheoryEstimates:
    """All constants and the measured rate of one fine-to-coarse sweep.

    The measured rate uses the solver itself: a V-cycle with one
    pre-smoothing sweep, no post-smoothing and a smoothed (not solved)
    coarsest level performs exactly the sweep whose error operator the
    constants describe.
    """
    ml = build_multilevel(hier, K)
    basis = kernel_basis(ml)
    CA, CS, c0 = estimate_CA(basis), estimate_CS(basis), compute_c0_xz(basis)
    cfg = SolverConfig(pre=1, post=0, coarsest="smooth")
    rho = measure_contraction(ml, cfg, trials=3, burn_in=0, iterations=iterations, seed=seed)
    cfg_in = SolverConfig(pre=1, post=0, coarsest="smooth", smoother="inexact")
    rho_in = measure_contraction(ml, cfg_in, trials=3, burn_in=0, iterations=iterations, seed=seed)
    kappa = float(patch_condition_numbers(ml).max())
    return TheoryEstimates(CA, CS, c0, sweep_norm2(basis), rho, rho_in, kappa,
                           kernel_dim=basis.n, n_subspaces=basis.N)
