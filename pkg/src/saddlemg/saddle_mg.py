"""Constrained-minimization V-cycle for RT0/P0 saddle-point systems.

The iterate always satisfies the divergence constraint: it starts from a
compatible flux built level by level, and every smoothing step or coarse
correction is divergence free. Smoothing is a multiplicative sweep over the
vertex patches of a level, each step minimizing the energy
``E(u) = u.M.u / 2 - rhs.u`` over the patch's divergence-free directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .hierarchy import (
    LevelPatches,
    MeshHierarchy,
    PatchIndexSet,
    build_prolongation,
    level_patches,
    patch_kernel_matrix,
)
from .linalg import DenseLU, as_csr, dense_solve
from .mesh import TriangleMesh
from .mixed_fem import (
    CoefficientTensor,
    IncompatibleDataError,
    MixedSystem,
    assemble_div,
    assemble_mass,
    assemble_rhs,
)

__all__ = [
    "SMOOTHERS",
    "SolverConfig",
    "SolveStats",
    "Level",
    "Multilevel",
    "build_multilevel",
    "compatible_flux",
    "local_kernel_solve",
    "local_dense_saddle_solve",
    "local_inexact_solve",
    "smoother_sweep",
    "vcycle",
    "solve",
    "energy",
    "measure_contraction",
    "direct_solve",
    "recover_pressure",
]

SMOOTHERS = ("kernel", "dense", "inexact")


@dataclass
class SolverConfig:
    tolerance: float = 1e-8
    max_iter: int = 100
    pre: int = 1
    post: int = 1
    smoother: str = "kernel"
    seed: int = 1
    post_order: str = "ascending"  # "descending" gives the symmetric cycle
    coarsest: str = "exact"  # or "smooth": pre/post sweeps on level 0 instead

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.pre < 0 or self.post < 0 or self.pre + self.post < 1:
            raise ValueError("need pre, post >= 0 and at least one smoothing sweep")
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"smoother must be one of {SMOOTHERS}")
        if self.post_order not in ("ascending", "descending"):
            raise ValueError("post_order must be 'ascending' or 'descending'")
        if self.coarsest not in ("exact", "smooth"):
            raise ValueError("coarsest must be 'exact' or 'smooth'")


@dataclass
class SolveStats:
    iterations: int = 0
    errors: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    constraint_residuals: list[float] = field(default_factory=list)
    converged: bool = False
    # (level, measured energy decrease, half sum of squared step norms) per sweep
    sweeps: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.errors[-1] if self.errors else 0.0

    @property
    def final_constraint_residual(self) -> float:
        return self.constraint_residuals[-1] if self.constraint_residuals else 0.0


@dataclass(eq=False)
class Level:
    index: int
    mesh: TriangleMesh
    M: sp.csr_matrix
    B: sp.csr_matrix
    P: sp.csr_matrix | None  # prolongation from the next coarser level
    patches: LevelPatches
    _sweep_data: tuple | None = None
    _local: list | None = None

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.mesh.boundary_edges)

    def sweep_data(self) -> tuple:
        """Flattened ``M c_i`` columns and ``c_i.M.c_i`` for the compiled sweep."""
        if self._sweep_data is None:
            Z = patch_kernel_matrix(self.mesh, self.patches)
            W = sp.csc_matrix(self.M @ Z)
            W.sort_indices()
            denom = np.asarray((Z.multiply(W)).sum(axis=0)).ravel()
            if np.any(denom <= 0):
                raise np.linalg.LinAlgError("patch kernel energy is not positive")
            p = self.patches
            self._sweep_data = (
                p.edge_ptr.astype(np.int64), p.edges.astype(np.int64), p.coef.astype(float),
                W.indptr.astype(np.int64), W.indices.astype(np.int64), W.data.copy(), denom,
            )
        return self._sweep_data

    def local_matrices(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Dense ``(M_loc, B_loc)`` per patch, cached."""
        if self._local is None:
            Mc = self.M.tocsr()
            Bc = self.B.tocsr()
            self._local = []
            for patch in self.patches:
                e, t = patch.edge_ids, patch.triangle_ids
                self._local.append((Mc[e][:, e].toarray(), Bc[t][:, e].toarray()))
        return self._local


@dataclass(eq=False)
class Multilevel:
    hierarchy: MeshHierarchy
    levels: list[Level]
    K: CoefficientTensor | None
    _coarse: DenseLU | None = None
    _coarse_kernel: tuple | None = None

    @property
    def J(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    def coarse_lu(self) -> DenseLU:
        """Factorized coarsest KKT matrix on free edges, last pressure removed."""
        if self._coarse is None:
            lev = self.levels[0]
            f = lev.free
            Mff = lev.M[f][:, f].toarray()
            Bf = lev.B[:, f].toarray()[:-1]
            nf, nt = len(f), Bf.shape[0]
            A = np.zeros((nf + nt, nf + nt))
            A[:nf, :nf] = Mff
            A[:nf, nf:] = Bf.T
            A[nf:, :nf] = Bf
            self._coarse = DenseLU(A)
        return self._coarse

    def coarse_correction(self, r: np.ndarray) -> np.ndarray:
        """Exact divergence-free minimizer of ``c.M.c/2 - r.c`` on level 0.

        Solved in the patch kernel basis ``Z`` (entries +-1), so ``B c = 0``
        holds to rounding even when ``c`` is tiny compared to the pressure
        part of ``r``; a saddle-point solve would leave a divergent
        component of the size of its own rounding error.
        """
        if self._coarse_kernel is None:
            lev = self.levels[0]
            Z = patch_kernel_matrix(lev.mesh, lev.patches)
            A = (Z.T @ lev.M @ Z).toarray()
            self._coarse_kernel = (Z, sla.cho_factor(A) if A.size else None)
        Z, fac = self._coarse_kernel
        if fac is None:
            return np.zeros(Z.shape[0])
        return Z @ sla.cho_solve(fac, Z.T @ r)

    def coarse_solve(self, r: np.ndarray, div_rhs: np.ndarray | None = None,
                     fixed: np.ndarray | None = None) -> np.ndarray:
        """Minimize ``u.M.u/2 - r.u`` on level 0 subject to ``B u = div_rhs``.

        Boundary fluxes are set to ``fixed`` (zero by default).
        """
        lev = self.levels[0]
        f = lev.free
        u = np.zeros(lev.mesh.n_edges)
        rhs_u = np.asarray(r, float).copy()
        rhs_p = np.zeros(lev.mesh.n_triangles) if div_rhs is None else np.asarray(div_rhs, float).copy()
        if fixed is not None:
            b = lev.mesh.boundary_edges
            u[b] = fixed[b]
            rhs_u -= lev.M @ u
            rhs_p -= lev.B @ u
        x = self.coarse_lu().solve(np.concatenate([rhs_u[f], rhs_p[:-1]]))
        u[f] = x[: len(f)]
        return u


def build_multilevel(hier: MeshHierarchy, K: CoefficientTensor | None = None,
                     coarse: str = "galerkin") -> Multilevel:
    """Per-level operators for a hierarchy.

    ``coarse="galerkin"`` forms ``M_k = P^T M_{k+1} P`` from the finest
    assembly; ``coarse="direct"`` assembles every level from its own mesh.
    The two coincide when ``K`` is piecewise constant on the coarsest mesh.
    """
    if coarse not in ("galerkin", "direct"):
        raise ValueError("coarse must be 'galerkin' or 'direct'")
    J = hier.J
    Ps = [None] + [build_prolongation(hier, k) for k in range(J - 1)]
    Ms: list = [None] * J
    Ms[-1] = assemble_mass(hier.meshes[-1], K)
    for k in range(J - 2, -1, -1):
        if coarse == "galerkin":
            Mk = Ps[k + 1].T @ Ms[k + 1] @ Ps[k + 1]
            Ms[k] = as_csr(0.5 * (Mk + Mk.T))
        else:
            Ms[k] = assemble_mass(hier.meshes[k], K)
    levels = [
        Level(k, hier.meshes[k], Ms[k], assemble_div(hier.meshes[k]), Ps[k],
              level_patches(hier.meshes[k], k))
        for k in range(J)
    ]
    return Multilevel(hier, levels, K)


# ---------------------------------------------------------------- local solves


def _local_block(A, patch: PatchIndexSet, rows: str = "edges") -> np.ndarray:
    if sp.issparse(A):
        r = patch.edge_ids if rows == "edges" else patch.triangle_ids
        return A.tocsr()[r][:, patch.edge_ids].toarray()
    return np.asarray(A, dtype=float)


def local_kernel_solve(patch: PatchIndexSet, M, r_loc: np.ndarray) -> float:
    """Step length along the patch kernel vector: ``t = c.r / c.M.c``.

    ``M`` is either the global sparse mass matrix or the dense patch block.
    """
    c = patch.kernel_vector
    Ml = _local_block(M, patch)
    denom = c @ Ml @ c
    if denom <= 0:
        raise np.linalg.LinAlgError("c.M.c <= 0: mass matrix is not SPD on the patch")
    return float(c @ r_loc / denom)


def _local_kkt(A: np.ndarray, Bl: np.ndarray, r_loc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[[A, B^T], [B, 0]]`` with the last local pressure removed."""
    ne = A.shape[0]
    Bp = Bl[:-1]
    nt = Bp.shape[0]
    K = np.zeros((ne + nt, ne + nt))
    K[:ne, :ne] = A
    K[:ne, ne:] = Bp.T
    K[ne:, :ne] = Bp
    x = dense_solve(K, np.concatenate([r_loc, np.zeros(nt)]))
    return x[:ne], np.concatenate([x[ne:], [0.0]])


def local_dense_saddle_solve(patch: PatchIndexSet, M, B, r_loc: np.ndarray):
    """Exact local saddle solve on a vertex patch; returns ``(e, p)``."""
    Ml = _local_block(M, patch)
    Bl = _local_block(B, patch, rows="triangles")
    return _local_kkt(Ml, Bl, np.asarray(r_loc, float))


def local_inexact_solve(patch: PatchIndexSet, M, B, r_loc: np.ndarray, D=None):
    """Preconditioned direction plus exact line search.

    Solves the local saddle system with ``D`` (default: the diagonal of the
    local mass) in place of ``M``, then scales the direction ``s`` by
    ``alpha = (r, s) / (M s, s)``. Returns ``(e, alpha)``. The saddle solve
    uses an orthonormal basis ``N`` of ``ker B_loc``:
    ``s = N (N^T D N)^{-1} N^T r``, which avoids the ill-conditioned KKT
    matrix when the coefficient jumps inside the patch.
    """
    Ml = _local_block(M, patch)
    Bl = _local_block(B, patch, rows="triangles")
    if D is None:
        D = np.diag(np.diag(Ml))
    else:
        D = np.asarray(D, float)
        D = np.diag(D) if D.ndim == 1 else D
    r_loc = np.asarray(r_loc, float)
    N = sla.null_space(Bl)
    s = N @ dense_solve(N.T @ D @ N, N.T @ r_loc)
    if not np.any(s):
        return np.zeros_like(s), 0.0
    sMs = s @ Ml @ s
    if sMs <= 0:
        raise np.linalg.LinAlgError("(M s, s) <= 0 in inexact local solve")
    alpha = float(r_loc @ s / sMs)
    return alpha * s, alpha


# ---------------------------------------------------------------- smoothing


def _order(n: int, order: str) -> np.ndarray:
    if order == "ascending":
        return np.arange(n, dtype=np.int64)
    if order == "descending":
        return np.arange(n - 1, -1, -1, dtype=np.int64)
    raise ValueError("order must be 'ascending' or 'descending'")


def smoother_sweep(level: Level, flux: np.ndarray, res: np.ndarray,
                   order: str = "ascending", kind: str = "kernel") -> float:
    """One multiplicative sweep over the patches of ``level``, in place.

    ``res`` must equal ``rhs - M flux`` on entry and is kept consistent.
    Returns half the sum of ``e_i.M.e_i`` over the local corrections.
    """
    idx = _order(len(level.patches), order)
    if kind == "kernel":
        return float(_kernels.kernel_sweep(idx, *level.sweep_data(), flux, res))
    if kind not in SMOOTHERS:
        raise ValueError(f"unknown smoother {kind!r}")
    M = level.M
    local = level.local_matrices()
    half = 0.0
    for i in idx:
        patch = level.patches[i]
        Ml, Bl = local[i]
        r_loc = res[patch.edge_ids]
        if kind == "dense":
            e, _ = _local_kkt(Ml, Bl, r_loc)
        else:
            e, _ = local_inexact_solve(patch, Ml, Bl, r_loc)
        flux[patch.edge_ids] += e
        res -= M[:, patch.edge_ids] @ e
        half += 0.5 * e @ Ml @ e
    return half


def _smooth(level, e, res, r0, order, kind, monitor):
    if monitor is None:
        smoother_sweep(level, e, res, order, kind)
        return
    # E(e) - E(e + d) = d.(r0 - M e) - d.M.d / 2, without cancelling two large energies
    e0 = e.copy()
    r_before = r0 - level.M @ e0
    half = smoother_sweep(level, e, res, order, kind)
    d = e - e0
    monitor.append((level.index, float(d @ r_before - 0.5 * d @ (level.M @ d)), half))


def vcycle(ml: Multilevel, r: np.ndarray, cfg: SolverConfig, k: int | None = None,
           monitor: list | None = None) -> np.ndarray:
    """Divergence-free correction for the residual ``r`` on level ``k``.

    Pre-smoothing (ascending patch order) from a zero correction,
    restriction by ``P^T``, recursion, prolongation, post-smoothing in
    ``cfg.post_order``. The coarsest level is solved exactly, or only
    smoothed when ``cfg.coarsest == "smooth"``; with ``post = 0`` the latter
    is one successive minimization pass over all patches of all levels,
    finest first.
    """
    k = ml.J - 1 if k is None else k
    if k == 0 and cfg.coarsest == "exact":
        return ml.coarse_correction(r)
    lev = ml.levels[k]
    e = np.zeros_like(r)
    res = np.array(r, dtype=float)
    for _ in range(cfg.pre):
        _smooth(lev, e, res, r, "ascending", cfg.smoother, monitor)
    if k > 0:
        ec = vcycle(ml, lev.P.T @ res, cfg, k - 1, monitor)
        de = lev.P @ ec
        e += de
        res -= lev.M @ de
    for _ in range(cfg.post):
        _smooth(lev, e, res, r, cfg.post_order, cfg.smoother, monitor)
    return e


# ---------------------------------------------------------------- outer iteration


class _GradientSpace:
    """Factorized ``B_f B_f^T`` for corrections in ``range(B_f^T)``.

    ``project`` removes the ``range(B_f^T)`` part of a free-edge vector.
    Divergence-free corrections are orthogonal to it, so the iteration is
    unchanged in exact arithmetic, but the residual stays as small as its
    kernel part and inner products with it do not cancel. ``make_feasible``
    adds the minimum-norm free-edge flux that removes the rounding left in
    ``B u - rhs_p`` by the local solves.
    """

    def __init__(self, mesh: TriangleMesh, B):
        self.free = np.flatnonzero(~mesh.boundary_edges)
        self.Bf = as_csr(B[:, self.free])
        self.B = B
        self.n = mesh.n_triangles
        self.lu = spla.splu(as_csr(self.Bf @ self.Bf.T)[:-1, :-1].tocsc()) if self.n > 1 else None

    def _solve(self, b: np.ndarray) -> np.ndarray:
        y = np.zeros(self.n)
        if self.lu is not None:
            y[:-1] = self.lu.solve(b[:-1])
        return y

    def project(self, v: np.ndarray) -> None:
        v[self.free] -= self.Bf.T @ self._solve(self.Bf @ v[self.free])

    def make_feasible(self, u: np.ndarray, rhs_p: np.ndarray) -> None:
        u[self.free] += self.Bf.T @ self._solve(rhs_p - self.B @ u)


def _coarsen(ml: Multilevel, rhs_p: np.ndarray, g: np.ndarray) -> tuple[list, list]:
    """Aggregate triangle sources and boundary fluxes to every level."""
    rp, gs = [None] * ml.J, [None] * ml.J
    rp[-1], gs[-1] = rhs_p, g
    for k in range(ml.J - 2, -1, -1):
        rmap = ml.hierarchy.maps[k]
        rp[k] = rp[k + 1][rmap.child_triangles].sum(axis=1)
        gs[k] = (gs[k + 1][rmap.child_edges] * rmap.child_edge_signs).sum(axis=1)
        gs[k][~ml.levels[k].mesh.boundary_edges] = 0.0
    return rp, gs


def check_compatible(mesh: TriangleMesh, rhs_p: np.ndarray, g: np.ndarray, tol: float = 1e-10):
    """Discrete divergence theorem: ``sum (B u)_T`` depends only on boundary fluxes."""
    b = np.flatnonzero(mesh.boundary_edges)
    B = assemble_div(mesh)
    boundary_total = float((B[:, b] @ g[b]).sum())
    gap = rhs_p.sum() - boundary_total
    if abs(gap) > tol * max(1.0, np.abs(rhs_p).sum() + np.abs(g[b]).sum()):
        raise IncompatibleDataError(f"source and boundary flux mismatch by {gap:.3e}")


def compatible_flux(ml: Multilevel, rhs_p: np.ndarray, g: np.ndarray | None = None,
                    check: bool = True,
                    space: _GradientSpace | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Finest-level flux with ``B u = rhs_p`` and boundary fluxes ``g``.

    Exact saddle solve on the coarsest mesh, then for every coarse triangle
    a local mixed solve for the three fine edges inside it, with the child
    edges inheriting half the coarse flux. A final minimum-norm correction
    removes the rounding left in the constraint. Returns the finest flux and
    the intermediate flux of every level.
    """
    fine = ml.finest.mesh
    g = np.zeros(fine.n_edges) if g is None else np.asarray(g, float)
    if check:
        check_compatible(fine, rhs_p, g)
    rp, gs = _coarsen(ml, np.asarray(rhs_p, float), g)
    u = ml.coarse_solve(np.zeros(ml.levels[0].mesh.n_edges), rp[0], fixed=gs[0])
    fluxes = [u]
    for k in range(ml.J - 1):
        lev = ml.levels[k + 1]
        rmap = ml.hierarchy.maps[k]
        uf = np.zeros(lev.mesh.n_edges)
        uf[rmap.child_edges] = 0.5 * u[:, None] * rmap.child_edge_signs
        b = lev.mesh.boundary_edges
        uf[b] = gs[k + 1][b]
        ie = rmap.interior_edges  # (T, 3)
        kids = rmap.child_triangles  # (T, 4)
        Mloc = np.asarray(lev.M[ie.repeat(3, axis=1).ravel(), np.tile(ie, 3).ravel()]
                          ).reshape(-1, 3, 3)
        Bfull = lev.B
        Bin = np.asarray(Bfull[kids.repeat(3, axis=1).ravel(), np.tile(ie, 4).ravel()]
                         ).reshape(-1, 4, 3)
        rhs = rp[k + 1][kids] - (Bfull @ uf)[kids]
        nT = len(ie)
        A = np.zeros((nT, 6, 6))
        A[:, :3, :3] = Mloc
        A[:, :3, 3:] = Bin[:, :3].transpose(0, 2, 1)
        A[:, 3:, :3] = Bin[:, :3]
        rhs6 = np.concatenate([np.zeros((nT, 3)), rhs[:, :3]], axis=1)
        x = np.linalg.solve(A, rhs6[..., None])[..., 0]
        uf[ie] = x[:, :3]
        u = uf
        fluxes.append(u)
    space = _GradientSpace(fine, ml.finest.B) if space is None else space
    u = u.copy()
    space.make_feasible(u, np.asarray(rhs_p, float))
    fluxes[-1] = u
    return u, fluxes


def energy(M: sp.spmatrix, rhs: np.ndarray, u: np.ndarray) -> float:
    return float(0.5 * u @ (M @ u) - rhs @ u)


def recover_pressure(mesh: TriangleMesh, M, B, u: np.ndarray, load: np.ndarray) -> np.ndarray:
    """Least-squares pressure from ``B_f B_f^T p = B_f (load - M u)_f``, area-mean zero."""
    f = np.flatnonzero(~mesh.boundary_edges)
    Bf = B[:, f]
    L = as_csr(Bf @ Bf.T)
    rhs = Bf @ (load - M @ u)[f]
    p = np.zeros(mesh.n_triangles)
    p[:-1] = spla.spsolve(L[:-1, :-1].tocsc(), rhs[:-1])
    area = mesh.areas
    return p - (area @ p) / area.sum()


def solve(ml: Multilevel, f=0.0, g: np.ndarray | None = None,
          cfg: SolverConfig | None = None, load: np.ndarray | None = None,
          callback: Callable[[int, np.ndarray], None] | None = None,
          monitor: bool = False):
    """V-cycle iteration for the Darcy system on the finest level.

    Stops when ``sqrt(|(c, r)| / |(du, rhs)|) <= tol``, where ``c`` is the
    V-cycle correction for residual ``r`` and ``du`` the accumulated
    correction of the homogeneous problem with right-hand side
    ``rhs = load - M u_*`` (its ``range(B^T)`` part removed). Returns
    ``(u, p, stats)``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    lev = ml.finest
    mesh, M, B = lev.mesh, lev.M, lev.B
    rhs_p = assemble_rhs(mesh, f)
    g = np.zeros(mesh.n_edges) if g is None else np.asarray(g, float)
    load = np.zeros(mesh.n_edges) if load is None else np.asarray(load, float)
    free = lev.free

    space = _GradientSpace(mesh, B)
    u_star, _ = compatible_flux(ml, rhs_p, g, space=space)
    rhs = load - M @ u_star
    rhs[mesh.boundary_edges] = 0.0
    space.project(rhs)
    du = np.zeros(mesh.n_edges)
    r = rhs.copy()
    stats = SolveStats()
    scale = np.abs(rhs_p).max(initial=0.0)

    def record(u):
        stats.energies.append(energy(M, load, u))
        stats.constraint_residuals.append(float(np.abs(B @ u - rhs_p).max(initial=0.0)))

    record(u_star)
    if not np.any(r[free]):
        stats.converged = True
        p = recover_pressure(mesh, M, B, u_star, load)
        return u_star, p, stats

    first = None
    sweeps = [] if monitor else None
    while stats.iterations < cfg.max_iter:
        c = vcycle(ml, r, cfg, monitor=sweeps)
        cr = abs(float(c @ r))
        du += c
        r -= M @ c
        r[mesh.boundary_edges] = 0.0
        space.project(r)
        stats.iterations += 1
        first = cr if first is None else first
        den = abs(float(du @ rhs))
        err = math.sqrt(cr / den) if den > 1e-300 else math.sqrt(cr / max(first, 1e-300))
        stats.errors.append(err)
        u = u_star + du
        record(u)
        if callback is not None:
            callback(stats.iterations, u)
        if err <= cfg.tolerance:
            stats.converged = True
            break
    if sweeps is not None:
        stats.sweeps = sweeps
    u = u_star + du
    p = recover_pressure(mesh, M, B, u, load)
    return u, p, stats


def measure_contraction(ml: Multilevel, cfg: SolverConfig | None = None, trials: int = 3,
                        burn_in: int = 3, iterations: int = 40, seed: int = 0,
                        start: np.ndarray | None = None) -> float:
    """Largest observed energy-error ratio ``E(u^{k+1}) / E(u^k)``.

    Uses the homogeneous problem (exact solution zero) from random
    divergence-free starts; ratios are skipped once the energy reaches the
    rounding floor. Returns NaN if no ratio could be measured.
    """
    cfg = SolverConfig() if cfg is None else cfg
    lev = ml.finest
    M = lev.M
    Z = patch_kernel_matrix(lev.mesh, lev.patches)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for trial in range(trials):
        u = Z @ rng.standard_normal(Z.shape[1]) if start is None else np.array(start, float)
        e0 = 0.5 * u @ (M @ u)
        if e0 <= 0:
            continue
        ek = e0
        for it in range(iterations):
            u = u + vcycle(ml, -(M @ u), cfg)
            enew = 0.5 * u @ (M @ u)
            if it >= burn_in and ek > 1e-24 * e0:
                worst = max(worst, enew / ek)
            ek = enew
            if ek <= 1e-24 * e0:
                break
        if start is not None:
            break
    return float(worst) if np.isfinite(worst) else float("nan")


def direct_solve(system: MixedSystem) -> tuple[np.ndarray, np.ndarray]:
    """Sparse direct solve of the full saddle system (test oracle).

    Fixed boundary fluxes are eliminated and the last pressure is pinned;
    the returned pressure is shifted to zero area-weighted mean.
    """
    mesh = system.mesh
    f = system.free_dofs
    u = np.zeros(mesh.n_edges)
    u[system.fixed_dofs] = system.fixed_values
    ru = system.rhs_u - system.M @ u
    rp = system.rhs_p - system.B @ u
    Bf = system.B[:-1][:, f]
    A = sp.bmat([[system.M[f][:, f], Bf.T], [Bf, None]], format="csc")
    x = spla.spsolve(A, np.concatenate([ru[f], rp[:-1]]))
    u[f] = x[: len(f)]
    p = np.concatenate([x[len(f):], [0.0]])
    area = mesh.areas
    return u, p - (area @ p) / area.sum()
