"""Lowest-order Raviart-Thomas / P0 mixed systems and the Crouzeix-Raviart system.

Flux unknowns are total fluxes ``u_E = int_E u . n_E ds`` through each edge,
so the local RT0 basis function with unit outward flux across the edge
opposite vertex ``p_i`` is ``psi_i(x) = (x - p_i) / (2|T|)``. The global
basis restricted to a triangle is ``sigma(T, E) * psi_i``.

``B`` discretizes ``-div``: ``B[T, E] = -sigma(T, E)``. A flux ``u`` is
feasible for a source ``f`` when ``(B u)_T = f_T |T|`` on every triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr
from .mesh import TriangleMesh

__all__ = [
    "CoefficientTensor",
    "IncompatibleDataError",
    "MixedSystem",
    "CRSystem",
    "example_tensor",
    "quadrature_points",
    "assemble_mass",
    "assemble_div",
    "assemble_rhs",
    "assemble_mixed",
    "assemble_cr",
    "element_averages",
    "mean_zero_source",
    "rt0_affine",
    "rt0_evaluate",
    "interpolate_flux",
    "dump_coo",
]


class IncompatibleDataError(ValueError):
    """Source and boundary flux violate the discrete divergence theorem."""


@dataclass(frozen=True)
class CoefficientTensor:
    """Permeability tensor field ``K(x, y, cell) -> (..., 2, 2)``.

    ``cell`` is the index of the initial-mesh triangle that contains the
    point (``TriangleMesh.parent_cell``), which lets coefficients be
    piecewise constant on the initial mesh even where quadrature points sit
    on coarse edges.
    """

    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    name: str = "K"
    is_constant: bool = False
    cell_values: np.ndarray | None = None

    def __call__(self, x, y, cell) -> np.ndarray:
        x, y, cell = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), cell)
        return np.asarray(self.fn(x, y, cell), dtype=float)


def _identity(x, y, cell):
    K = np.zeros(x.shape + (2, 2))
    K[..., 0, 0] = K[..., 1, 1] = 1.0
    return K


IDENTITY = CoefficientTensor(_identity, name="identity", is_constant=True)


def example_tensor(example: int, seed: int = 1) -> CoefficientTensor:
    """Permeability tensors of the four benchmark examples.

    Examples 3 and 4 draw one exponent ``p`` in ``{0, ..., 5}`` per square of
    the initial 4 x 4 grid and set ``K = 10^-p I``; the cell lookup assumes
    the initial mesh came from ``build_square_mesh(4)`` (possibly distorted).
    """
    if example == 1:
        return IDENTITY
    if example == 2:

        def fn(x, y, cell):
            r2 = x * x + y * y
            K = np.empty(x.shape + (2, 2))
            K[..., 0, 0] = 1.0 + 4.0 * r2
            K[..., 0, 1] = K[..., 1, 0] = 3.0 * x * y
            K[..., 1, 1] = 1.0 + 11.0 * r2
            return K

        return CoefficientTensor(fn, name="rusten-winther")
    if example in (3, 4):
        rng = np.random.default_rng(seed)
        a = 10.0 ** -rng.integers(0, 6, size=16).astype(float)

        def fn(x, y, cell):
            K = np.zeros(x.shape + (2, 2))
            K[..., 0, 0] = K[..., 1, 1] = a[np.asarray(cell) // 2]
            return K

        return CoefficientTensor(fn, name=f"jump-{seed}", cell_values=a)
    raise ValueError(f"unknown example {example}; expected 1..4")


def quadrature_points(mesh: TriangleMesh) -> np.ndarray:
    """Edge-midpoint rule nodes, shape (T, 3, 2); node k is opposite vertex k."""
    p = mesh.corners
    return 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])


def _tensor_at_quadrature(mesh: TriangleMesh, K: CoefficientTensor) -> np.ndarray:
    q = quadrature_points(mesh)
    cell = np.repeat(mesh.parent_cell[:, None], 3, axis=1)
    Kq = K(q[..., 0], q[..., 1], cell)
    sym = np.abs(Kq[..., 0, 1] - Kq[..., 1, 0])
    det = Kq[..., 0, 0] * Kq[..., 1, 1] - Kq[..., 0, 1] * Kq[..., 1, 0]
    if np.any(sym > 1e-12 * np.abs(Kq).max()) or np.any(det <= 0) or np.any(Kq[..., 0, 0] <= 0):
        raise ValueError(f"coefficient tensor {K.name} is not SPD at a quadrature point")
    return Kq


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    return as_csr(sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape))


def local_mass(mesh: TriangleMesh, K: CoefficientTensor | None = None) -> np.ndarray:
    """Element mass matrices in the global (signed) basis, shape (T, 3, 3)."""
    K = IDENTITY if K is None else K
    Kq = _tensor_at_quadrature(mesh, K)
    Kinv = np.linalg.inv(Kq)
    p = mesh.corners
    area = mesh.areas
    q = quadrature_points(mesh)
    # psi[t, k, i, :] = psi_i evaluated at node k
    psi = (q[:, :, None, :] - p[:, None, :, :]) / (2.0 * area[:, None, None, None])
    loc = np.einsum("t,tkia,tkab,tkjb->tij", area / 3.0, psi, Kinv, psi)
    s = mesh.tri_signs.astype(float)
    return loc * s[:, :, None] * s[:, None, :]


def assemble_mass(mesh: TriangleMesh, K: CoefficientTensor | None = None) -> sp.csr_matrix:
    """Weighted RT0 mass matrix ``int K^{-1} phi_E . phi_F``."""
    loc = local_mass(mesh, K)
    te = mesh.tri_edges
    rows = np.repeat(te[:, :, None], 3, axis=2)
    cols = np.repeat(te[:, None, :], 3, axis=1)
    M = _scatter(rows, cols, loc, (mesh.n_edges, mesh.n_edges))
    # exact symmetry regardless of summation order
    return as_csr(0.5 * (M + M.T))


def assemble_div(mesh: TriangleMesh) -> sp.csr_matrix:
    rows = np.repeat(np.arange(mesh.n_triangles)[:, None], 3, axis=1)
    return _scatter(rows, mesh.tri_edges, -mesh.tri_signs.astype(float),
                    (mesh.n_triangles, mesh.n_edges))


def element_averages(mesh: TriangleMesh, f) -> np.ndarray:
    """Per-triangle averages ``f_T`` by the edge-midpoint rule.

    ``f`` is a vectorized callable ``f(x, y)``, a scalar, or already an
    array of per-triangle values.
    """
    if callable(f):
        q = quadrature_points(mesh)
        return np.asarray(f(q[..., 0], q[..., 1]), dtype=float).reshape(-1, 3).mean(axis=1)
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full(mesh.n_triangles, float(f))
    if f.shape != (mesh.n_triangles,):
        raise ValueError("per-triangle source has the wrong length")
    return f


def mean_zero_source(mesh: TriangleMesh, f) -> np.ndarray:
    """Per-triangle averages of ``f`` shifted to zero integral."""
    fT = element_averages(mesh, f)
    area = mesh.areas
    return fT - (area @ fT) / area.sum()


def assemble_rhs(mesh: TriangleMesh, f, require_mean_zero: bool = False,
                 tol: float = 1e-10) -> np.ndarray:
    """Pressure right-hand side ``f_T |T|``.

    With ``require_mean_zero`` (pure flux problem with ``g = 0``) a source
    whose integral does not vanish raises IncompatibleDataError.
    """
    rhs = element_averages(mesh, f) * mesh.areas
    if require_mean_zero:
        total = rhs.sum()
        if abs(total) > tol * max(1.0, np.abs(rhs).sum()):
            raise IncompatibleDataError(f"source integral {total:.3e} is not zero")
    return rhs


@dataclass(frozen=True, eq=False)
class MixedSystem:
    """``[[M, B^T], [B, 0]] [u; p] = [rhs_u; rhs_p]`` with pinned boundary fluxes."""

    mesh: TriangleMesh
    M: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.mesh.n_edges, dtype=bool)
        mask[self.fixed_dofs] = False
        return np.flatnonzero(mask)

    @property
    def size(self) -> int:
        return self.mesh.n_edges + self.mesh.n_triangles

    def energy(self, u: np.ndarray) -> float:
        return float(0.5 * u @ (self.M @ u) - self.rhs_u @ u)


def assemble_mixed(mesh: TriangleMesh, K: CoefficientTensor | None = None, f=0.0,
                   g: np.ndarray | None = None,
                   load: np.ndarray | None = None) -> MixedSystem:
    """Assemble the Darcy saddle system.

    ``g`` is a full-length edge vector whose boundary entries are the
    prescribed fluxes (zero when omitted); ``load`` is an optional velocity
    right-hand side.
    """
    fixed = np.flatnonzero(mesh.boundary_edges)
    gv = np.zeros(len(fixed)) if g is None else np.asarray(g, float)[fixed]
    return MixedSystem(
        mesh=mesh,
        M=assemble_mass(mesh, K),
        B=assemble_div(mesh),
        rhs_u=np.zeros(mesh.n_edges) if load is None else np.asarray(load, float),
        rhs_p=assemble_rhs(mesh, f),
        fixed_dofs=fixed,
        fixed_values=gv,
    )


def rt0_affine(mesh: TriangleMesh, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Write ``u|_T(x) = a_T + b_T (x - x_T)``; returns ``(a, b)``."""
    p = mesh.corners
    area = mesh.areas
    w = mesh.tri_signs * np.asarray(u)[mesh.tri_edges] / (2.0 * area[:, None])
    b = w.sum(axis=1)
    a = np.einsum("tk,tkd->td", w, mesh.centroids[:, None, :] - p)
    return a, b


def rt0_evaluate(mesh: TriangleMesh, u: np.ndarray, tris: np.ndarray,
                 points: np.ndarray) -> np.ndarray:
    """Evaluate the RT0 field at ``points[k]`` lying in triangle ``tris[k]``."""
    a, b = rt0_affine(mesh, u)
    return a[tris] + b[tris, None] * (points - mesh.centroids[tris])


def interpolate_flux(mesh: TriangleMesh, field: Callable) -> np.ndarray:
    """Edge fluxes of a vector field by 2-point Gauss (exact for affine fields)."""
    v0 = mesh.vertices[mesh.edges[:, 0]]
    v1 = mesh.vertices[mesh.edges[:, 1]]
    n = mesh.edge_normals * mesh.edge_lengths[:, None]
    out = np.zeros(mesh.n_edges)
    for s in (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)):
        x = v0 + s * (v1 - v0)
        vx, vy = field(x[:, 0], x[:, 1])
        out += 0.5 * (n[:, 0] * vx + n[:, 1] * vy)
    return out


@dataclass(frozen=True, eq=False)
class CRSystem:
    """Crouzeix-Raviart system on edge-midpoint values.

    ``mean_weights @ lam`` is ``int lam dx``, used to fix the constant.
    """

    mesh: TriangleMesh
    stiffness: sp.csr_matrix
    rhs: np.ndarray
    mean_weights: np.ndarray


def cr_local_stiffness(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Element CR stiffness and basis gradients for corners of shape (T, 3, 2).

    The basis function equal to one at the midpoint of the edge opposite
    vertex ``i`` is ``1 - 2 b_i``; its gradient is the outward scaled normal
    of that edge divided by the area.
    """
    p = corners
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    scaled_normal = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    grads = scaled_normal / area[:, None, None]
    S = area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    return S, grads


def assemble_cr(mesh: TriangleMesh, f=0.0) -> CRSystem:
    S_loc, _ = cr_local_stiffness(mesh.corners)
    te = mesh.tri_edges
    rows = np.repeat(te[:, :, None], 3, axis=2)
    cols = np.repeat(te[:, None, :], 3, axis=1)
    S = _scatter(rows, cols, S_loc, (mesh.n_edges, mesh.n_edges))
    third = np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1)
    fT = element_averages(mesh, f)
    rhs = np.bincount(te.ravel(), weights=(third * fT[:, None]).ravel(), minlength=mesh.n_edges)
    weights = np.bincount(te.ravel(), weights=third.ravel(), minlength=mesh.n_edges)
    return CRSystem(mesh=mesh, stiffness=as_csr(0.5 * (S + S.T)), rhs=rhs, mean_weights=weights)


def dump_coo(A: sp.spmatrix, path) -> None:
    """Write ``i j value`` lines for debugging."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v!r}\n")
