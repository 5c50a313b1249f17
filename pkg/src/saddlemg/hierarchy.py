"""Mesh hierarchies, vertex patches and RT0 prolongation between nested levels.

Levels are indexed from 0 (coarsest) to J-1 (finest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr, spmv_transpose
from .mesh import RefinementMap, TriangleMesh, uniform_refine

__all__ = [
    "MeshHierarchy",
    "PatchIndexSet",
    "LevelPatches",
    "build_hierarchy",
    "level_patches",
    "vertex_patches",
    "patch_kernel_matrix",
    "build_prolongation",
    "restrict_residual",
]


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    meshes: list[TriangleMesh]
    maps: list[RefinementMap]  # maps[k] refines meshes[k] into meshes[k+1]

    @property
    def J(self) -> int:
        return len(self.meshes)

    @property
    def finest(self) -> TriangleMesh:
        return self.meshes[-1]

    @property
    def h(self) -> list[float]:
        """Largest edge length per level."""
        return [float(m.edge_lengths.max()) for m in self.meshes]


def build_hierarchy(coarse: TriangleMesh, J: int) -> MeshHierarchy:
    if J < 1:
        raise ValueError("need at least one level")
    meshes, maps = [coarse], []
    for _ in range(J - 1):
        fine, rmap = uniform_refine(meshes[-1])
        meshes.append(fine)
        maps.append(rmap)
    return MeshHierarchy(meshes, maps)


@dataclass(frozen=True)
class PatchIndexSet:
    """Edges and triangles around one interior vertex of a level.

    ``kernel_vector[j]`` is the flux of the curl of the vertex hat function
    through ``edge_ids[j]``; it is +1 when the vertex is the higher-index
    endpoint of the edge and -1 otherwise.
    """

    level: int
    vertex: int
    edge_ids: np.ndarray
    triangle_ids: np.ndarray
    kernel_vector: np.ndarray


@dataclass(frozen=True, eq=False)
class LevelPatches:
    """All patches of one level in flat CSR-like arrays (ascending vertex)."""

    level: int
    vertices: np.ndarray
    edge_ptr: np.ndarray
    edges: np.ndarray
    coef: np.ndarray
    tri_ptr: np.ndarray
    tris: np.ndarray

    def __len__(self) -> int:
        return len(self.vertices)

    def __getitem__(self, i: int) -> PatchIndexSet:
        e = slice(self.edge_ptr[i], self.edge_ptr[i + 1])
        t = slice(self.tri_ptr[i], self.tri_ptr[i + 1])
        return PatchIndexSet(self.level, int(self.vertices[i]), self.edges[e],
                             self.tris[t], self.coef[e])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _ccw(order_keys: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Stable sort by owner, then by angle within each owner."""
    return np.lexsort((order_keys, owner))


def level_patches(mesh: TriangleMesh, level: int = 0) -> LevelPatches:
    interior = mesh.interior_vertices
    x = mesh.vertices
    eoff, v2e = mesh.vertex_edges()
    toff, v2t = mesh.vertex_triangles()

    e_counts = eoff[interior + 1] - eoff[interior]
    e_owner = np.repeat(interior, e_counts)
    e_ids = np.concatenate([v2e[eoff[v]:eoff[v + 1]] for v in interior]) if len(interior) \
        else np.zeros(0, dtype=np.int64)
    a, b = mesh.edges[e_ids, 0], mesh.edges[e_ids, 1]
    other = np.where(a == e_owner, b, a)
    d = x[other] - x[e_owner]
    order = _ccw(np.arctan2(d[:, 1], d[:, 0]), e_owner)
    e_ids, e_owner = e_ids[order], e_owner[order]
    coef = np.where(mesh.edges[e_ids, 1] == e_owner, 1.0, -1.0)

    t_counts = toff[interior + 1] - toff[interior]
    t_owner = np.repeat(interior, t_counts)
    t_ids = np.concatenate([v2t[toff[v]:toff[v + 1]] for v in interior]) if len(interior) \
        else np.zeros(0, dtype=np.int64)
    d = mesh.centroids[t_ids] - x[t_owner]
    order = _ccw(np.arctan2(d[:, 1], d[:, 0]), t_owner)
    t_ids = t_ids[order]

    return LevelPatches(
        level=level,
        vertices=interior,
        edge_ptr=np.concatenate([[0], np.cumsum(e_counts)]),
        edges=e_ids,
        coef=coef,
        tri_ptr=np.concatenate([[0], np.cumsum(t_counts)]),
        tris=t_ids,
    )


def vertex_patches(hier: MeshHierarchy, k: int) -> list[PatchIndexSet]:
    return list(level_patches(hier.meshes[k], k))


def patch_kernel_matrix(mesh: TriangleMesh, patches: LevelPatches) -> sp.csr_matrix:
    """Columns are the patch kernel vectors as global edge vectors."""
    cols = np.repeat(np.arange(len(patches)), np.diff(patches.edge_ptr))
    return as_csr(sp.coo_matrix((patches.coef, (patches.edges, cols)),
                                shape=(mesh.n_edges, len(patches))))


def build_prolongation(hier: MeshHierarchy, k: int) -> sp.csr_matrix:
    """Natural RT0 inclusion from level ``k`` into level ``k + 1``.

    Child edges of a coarse edge take half its flux (the normal component
    is constant along the edge). Fine edges inside a coarse triangle get
    the exact line integral of the coarse basis field; its normal component
    is affine along the segment, so the midpoint rule is exact.
    """
    if not 0 <= k < hier.J - 1:
        raise ValueError(f"no finer level above {k}")
    coarse, fine, rmap = hier.meshes[k], hier.meshes[k + 1], hier.maps[k]

    rows = [rmap.child_edges.ravel()]
    cols = [np.repeat(np.arange(coarse.n_edges), 2)]
    vals = [0.5 * rmap.child_edge_signs.ravel().astype(float)]

    p = coarse.corners
    area = coarse.areas
    ie = rmap.interior_edges  # (T, 3)
    mid = fine.edge_midpoints[ie]  # (T, 3, 2)
    n = (fine.edge_normals * fine.edge_lengths[:, None])[ie]  # (T, 3, 2)
    # psi[t, e, i] . n[t, e] for fine interior edge e and coarse basis i
    psi = (mid[:, :, None, :] - p[:, None, :, :]) / (2.0 * area[:, None, None, None])
    flux = np.einsum("teid,ted->tei", psi, n) * coarse.tri_signs[:, None, :]
    rows.append(np.repeat(ie[:, :, None], 3, axis=2).ravel())
    cols.append(np.repeat(coarse.tri_edges[:, None, :], 3, axis=1).ravel())
    vals.append(flux.ravel())

    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(fine.n_edges, coarse.n_edges))
    return as_csr(P)


def restrict_residual(P: sp.csr_matrix, r_fine: np.ndarray) -> np.ndarray:
    return spmv_transpose(P, r_fine)
