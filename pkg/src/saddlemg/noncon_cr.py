"""Crouzeix-Raviart multigrid through the mixed-method equivalence.

For a piecewise constant source ``f`` the CR solution ``lam`` of
``(grad_h lam, grad_h mu) = (f, mu)`` (pure Neumann, mean zero) and the
RT0 flux of the mixed system with ``B u = f |T|`` are related elementwise by

    u|_T = grad lam|_T - f_T / 2 * (x - x_T).

The flux through edge ``E`` of ``T`` in outward direction is then
``|E| grad lam_T . n_out - f_T |T| / 3``.

An intermediate flux iterate is feasible but carries a discrete curl
component, so its elementwise potential is only a broken P1 field; CRField
stores that field and reports how far it is from being single valued at
edge midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hierarchy import PatchIndexSet
from .linalg import as_csr, dense_solve
from .mesh import TriangleMesh
from .mixed_fem import (
    IncompatibleDataError,
    assemble_cr,
    assemble_rhs,
    element_averages,
    rt0_affine,
)
from .saddle_mg import Multilevel, SolverConfig, SolveStats, solve

__all__ = [
    "CRField",
    "cr_direct_solve",
    "cr_to_flux",
    "flux_to_cr",
    "broken_energy",
    "cr_local_source",
    "cr_local_neumann_solve",
    "cr_smoother_sweep",
    "CRSolveResult",
    "cr_solve_mg",
]


@dataclass(frozen=True, eq=False)
class CRField:
    """Elementwise P1 field ``lam|_T = const_T + grad_T . (x - x_T)``.

    ``values`` are edge-midpoint values (the average of the two sides on
    interior edges); ``max_jump`` is the largest midpoint mismatch between
    neighbours, zero for a genuine CR function.
    """

    mesh: TriangleMesh
    grad: np.ndarray  # (T, 2)
    const: np.ndarray  # (T,), value at the centroid
    values: np.ndarray  # (E,)
    max_jump: float
    normalized: bool = True

    def element_means(self) -> np.ndarray:
        return self.const

    def mean(self) -> float:
        area = self.mesh.areas
        return float(area @ self.const / area.sum())

    @classmethod
    def from_values(cls, mesh: TriangleMesh, values: np.ndarray, normalize: bool = True) -> "CRField":
        """CR function from midpoint values."""
        values = np.asarray(values, dtype=float)
        if normalize:
            area = mesh.areas
            means = values[mesh.tri_edges].mean(axis=1)
            values = values - area @ means / area.sum()
        grad = _midpoint_gradients(mesh, values[mesh.tri_edges])
        const = values[mesh.tri_edges].mean(axis=1)
        return cls(mesh, grad, const, values, 0.0, normalize)


def _midpoint_gradients(mesh: TriangleMesh, vals: np.ndarray) -> np.ndarray:
    """Gradient of the P1 function with midpoint values ``vals`` (T, 3)."""
    p = mesh.corners
    # CR basis of the edge opposite vertex i has gradient |E| n_out / |T|
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    scaled_normal = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    return np.einsum("ti,tid->td", vals, scaled_normal) / mesh.areas[:, None]


def _outward_midpoint_offsets(mesh: TriangleMesh) -> np.ndarray:
    """``m_E - x_T`` for the edge opposite each local vertex, shape (T, 3, 2)."""
    p = mesh.corners
    mid = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])
    return mid - mesh.centroids[:, None, :]


def cr_direct_solve(mesh: TriangleMesh, f) -> CRField:
    """Sparse direct solve of the pure Neumann CR problem, mean zero."""
    sys = assemble_cr(mesh, f)
    if abs(sys.rhs.sum()) > 1e-10 * max(1.0, np.abs(sys.rhs).sum()):
        raise IncompatibleDataError("source integral is not zero")
    S = sys.stiffness.tocsr()
    lam = np.zeros(mesh.n_edges)
    lam[:-1] = spla.spsolve(S[:-1, :-1].tocsc(), sys.rhs[:-1])
    lam -= sys.mean_weights @ lam / sys.mean_weights.sum()
    return CRField.from_values(mesh, lam, normalize=False)


def cr_to_flux(mesh: TriangleMesh, lam, f) -> np.ndarray:
    """Edge fluxes of ``grad_h lam - f_T/2 (x - x_T)``.

    ``lam`` is a CRField or an array of midpoint values. On an edge shared
    by two triangles the value from the lower-index triangle is used; both
    agree when ``lam`` solves the CR system.
    """
    grad = lam.grad if isinstance(lam, CRField) else _midpoint_gradients(mesh, np.asarray(lam)[mesh.tri_edges])
    fT = element_averages(mesh, f)
    p = mesh.corners
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    scaled_normal = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    out = np.einsum("td,tid->ti", grad, scaled_normal) - (fT * mesh.areas / 3.0)[:, None]
    u = np.zeros(mesh.n_edges)
    te = mesh.tri_edges.ravel()
    vals = (out * mesh.tri_signs).ravel()
    # reverse order so that the first (lowest) triangle wins
    u[te[::-1]] = vals[::-1]
    return u


def flux_to_cr(mesh: TriangleMesh, u: np.ndarray, f, tol: float = 1e-9) -> CRField:
    """Broken P1 potential of a feasible flux, mean zero.

    The gradient on ``T`` is ``u(x_T)``. Element constants are fitted by
    least squares to the midpoint values of neighbours, which makes the
    field continuous at midpoints whenever that is possible.
    """
    fT = element_averages(mesh, f)
    a, b = rt0_affine(mesh, u)
    scale = max(1.0, np.abs(fT).max(initial=0.0))
    if np.abs(b + 0.5 * fT).max(initial=0.0) > tol * scale:
        raise IncompatibleDataError("flux does not satisfy the divergence constraint")
    off = np.einsum("tkd,td->tk", _outward_midpoint_offsets(mesh), a)  # lam(m_E) - const_T
    te = mesh.tri_edges
    # edge -> the (one or two) triangles around it
    order = np.argsort(te.ravel(), kind="stable")
    tri_of = np.repeat(np.arange(mesh.n_triangles), 3)[order]
    loc_off = off.ravel()[order]
    edge_sorted = te.ravel()[order]
    interior = np.flatnonzero(~mesh.boundary_edges)
    first = np.searchsorted(edge_sorted, interior)
    t1, t2 = tri_of[first], tri_of[first + 1]
    o1, o2 = loc_off[first], loc_off[first + 1]
    # minimize sum over interior edges of (c1 + o1 - c2 - o2)^2
    nT = mesh.n_triangles
    rows = np.arange(len(interior))
    D = sp.csr_matrix((np.r_[np.ones(len(rows)), -np.ones(len(rows))],
                       (np.r_[rows, rows], np.r_[t1, t2])), shape=(len(interior), nT))
    rhs = o2 - o1
    L = as_csr(D.T @ D)
    c = np.zeros(nT)
    if nT > 1:
        c[:-1] = spla.spsolve(L[:-1, :-1].tocsc(), (D.T @ rhs)[:-1])
    area = mesh.areas
    c -= area @ c / area.sum()
    vals_T = c[:, None] + off
    jump = np.abs((c[t1] + o1) - (c[t2] + o2)).max(initial=0.0)
    values = np.zeros(mesh.n_edges)
    counts = np.bincount(te.ravel(), minlength=mesh.n_edges)
    np.add.at(values, te.ravel(), vals_T.ravel())
    values /= counts
    return CRField(mesh, a, c, values, float(jump), True)


def broken_energy(mesh: TriangleMesh, grad: np.ndarray) -> float:
    """``||grad_h lam||^2`` for an elementwise constant gradient."""
    return float(mesh.areas @ np.einsum("td,td->t", grad, grad))


# ---------------------------------------------------------------- local problems


def cr_local_source(M_loc: np.ndarray, B_loc: np.ndarray, r_loc: np.ndarray,
                    areas: np.ndarray) -> np.ndarray:
    """Per-triangle source ``-div M_loc^{-1} r`` of a local correction problem.

    With the convention ``B = -div`` this is ``(B_loc M_loc^{-1} r)_T / |T|``.
    Paired with zero flux through the patch boundary it defines the local
    Neumann problem whose solution is the local saddle correction.
    """
    w = dense_solve(M_loc, np.asarray(r_loc, float))
    return (B_loc @ w) / areas


def _patch_geometry(mesh: TriangleMesh, patch: PatchIndexSet):
    """Local numbering of all edges of the patch triangles.

    Returns the triangle list, the local edge ids (T_loc, 3), the global ids
    of local edges and a mask of those inside the patch.
    """
    tris = patch.triangle_ids
    te = mesh.tri_edges[tris]
    glob, loc = np.unique(te, return_inverse=True)
    loc = loc.reshape(te.shape)
    inside = np.isin(glob, patch.edge_ids)
    return tris, loc, glob, inside


def cr_local_neumann_solve(mesh: TriangleMesh, patch: PatchIndexSet, u: np.ndarray,
                           f) -> np.ndarray:
    """Local CR solve on a vertex patch with flux data from ``u``.

    Solves the CR problem on the patch triangles with the source ``f`` and
    the fluxes of ``u`` prescribed on the outer edges of the patch, then
    converts back to fluxes on the edges inside the patch. Returns the new
    values of ``u`` on ``patch.edge_ids`` (in that order).
    """
    fT = element_averages(mesh, f)
    tris, loc, glob, inside = _patch_geometry(mesh, patch)
    n = len(glob)
    S_loc_all = _local_cr_stiffness(mesh, tris)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    third = fT[tris] * mesh.areas[tris] / 3.0
    for k in range(len(tris)):
        A[np.ix_(loc[k], loc[k])] += S_loc_all[k]
        rhs[loc[k]] += third[k]
    # outer edges: outward flux fixed to the current flux, sign from the triangle
    for k, t in enumerate(tris):
        for j in range(3):
            e = loc[k, j]
            if not inside[e]:
                rhs[e] += mesh.tri_signs[t, j] * u[glob[e]]
    # pure Neumann: pin the last value (compatible data, constant kernel)
    lam = np.zeros(n)
    lam[:-1] = dense_solve(A[:-1, :-1], rhs[:-1])
    grad = _midpoint_gradients_sub(mesh, tris, lam[loc])
    p = mesh.corners[tris]
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    scaled_normal = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    out = np.einsum("td,tid->ti", grad, scaled_normal) - third[:, None]
    new = {}
    for k, t in enumerate(tris):
        for j in range(3):
            e = loc[k, j]
            if inside[e] and glob[e] not in new:
                new[glob[e]] = mesh.tri_signs[t, j] * out[k, j]
    return np.array([new[e] for e in patch.edge_ids])


def _local_cr_stiffness(mesh: TriangleMesh, tris: np.ndarray) -> np.ndarray:
    p = mesh.corners[tris]
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    sn = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    area = mesh.areas[tris]
    return np.einsum("tid,tjd->tij", sn, sn) / area[:, None, None]


def _midpoint_gradients_sub(mesh: TriangleMesh, tris: np.ndarray, vals: np.ndarray) -> np.ndarray:
    p = mesh.corners[tris]
    d = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    sn = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    return np.einsum("ti,tid->td", vals, sn) / mesh.areas[tris][:, None]


def cr_smoother_sweep(mesh: TriangleMesh, patches, u: np.ndarray, f,
                      order: str = "ascending") -> np.ndarray:
    """One multiplicative sweep of local Neumann CR solves, updating ``u`` in place."""
    idx = range(len(patches)) if order == "ascending" else range(len(patches) - 1, -1, -1)
    for i in idx:
        patch = patches[i]
        u[patch.edge_ids] = cr_local_neumann_solve(mesh, patch, u, f)
    return u


# ---------------------------------------------------------------- multigrid


@dataclass
class CRSolveResult:
    lam: CRField
    flux: np.ndarray
    stats: SolveStats
    # per iteration: (||u - u^k||_M^2, ||grad_h(lam - lam^k)||^2)
    energy_pairs: list[tuple[float, float]]

    @property
    def equivalence_residuals(self) -> list[float]:
        return [abs(a - b) / max(a, b, 1e-300) for a, b in self.energy_pairs]

    @property
    def max_equivalence_residual(self) -> float:
        res = self.equivalence_residuals
        return max(res) if res else 0.0


def cr_solve_mg(ml: Multilevel, f, cfg: SolverConfig | None = None,
                reference: CRField | None = None) -> CRSolveResult:
    """CR solution by the flux V-cycle; requires ``K = I`` and ``int f = 0``.

    ``reference`` (default: a direct CR solve) provides ``lam`` for the
    per-iteration energy check ``||u - u^k||_M^2 = ||grad_h(lam - lam^k)||^2``,
    where ``u = cr_to_flux(lam)`` and ``grad_h lam^k`` is the elementwise
    gradient recovered from ``u^k``.
    """
    mesh = ml.finest.mesh
    M = ml.finest.M
    assemble_rhs(mesh, f, require_mean_zero=True)
    if reference is None:
        reference = cr_direct_solve(mesh, f)
    u_ref = cr_to_flux(mesh, reference, f)
    pairs: list[tuple[float, float]] = []
    # d = u - u^k is divergence free in exact arithmetic, but forming it by
    # cancellation leaves a divergence of size eps*|u|; remove it with the
    # minimum-norm correction so both sides refer to the same feasible d
    free = np.flatnonzero(~mesh.boundary_edges)
    Bf = ml.finest.B[:, free]
    lu = spla.splu(as_csr(Bf @ Bf.T)[:-1, :-1].tocsc())

    def check(_, uk):
        d = u_ref - uk
        Bd = ml.finest.B @ d
        y = np.zeros(mesh.n_triangles)
        y[:-1] = lu.solve(Bd[:-1])
        d[free] -= Bf.T @ y
        # d is divergence free, so its gradient part is the whole field
        ad, _b = rt0_affine(mesh, d)
        pairs.append((float(d @ (M @ d)), broken_energy(mesh, ad)))

    u, _, stats = solve(ml, f, cfg=cfg, callback=check)
    return CRSolveResult(flux_to_cr(mesh, u, f), u, stats, pairs)
