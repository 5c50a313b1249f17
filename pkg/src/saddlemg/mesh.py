"""Triangulations of the unit square: construction, red refinement, distortion.

Edges carry a global orientation from the lower to the higher vertex index.
The global edge normal is the clockwise rotation of that unit tangent, and
``tri_signs[t, i]`` is +1 exactly when this normal points out of triangle
``t`` across its local edge ``i`` (the edge opposite local vertex ``i``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TriangleMesh",
    "RefinementMap",
    "MeshError",
    "build_square_mesh",
    "uniform_refine",
    "distort_mesh",
    "check_mesh",
    "write_mesh",
]


class MeshError(ValueError):
    """Raised when a mesh operation cannot produce a valid triangulation."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_signs: np.ndarray
    boundary_edges: np.ndarray
    # index of the initial-mesh triangle each triangle descends from
    parent_cell: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (T, 3, 2)."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.corners
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    @property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normals(self) -> np.ndarray:
        """Unit global normals: the tangent rotated 90 degrees clockwise."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        t = d / np.hypot(d[:, 0], d[:, 1])[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @property
    def interior_vertices(self) -> np.ndarray:
        """Indices of vertices not on the boundary, ascending."""
        return np.flatnonzero(~self.boundary_vertices)

    def vertex_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style (offsets, triangle ids) incidence from vertices to triangles."""
        if "v2t" not in self._cache:
            flat = self.triangles.ravel()
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.n_vertices)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            self._cache["v2t"] = (offsets, order // 3)
        return self._cache["v2t"]

    def vertex_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style (offsets, edge ids) incidence from vertices to edges."""
        if "v2e" not in self._cache:
            flat = self.edges.ravel()
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.n_vertices)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            self._cache["v2e"] = (offsets, order // 2)
        return self._cache["v2e"]


@dataclass(frozen=True, eq=False)
class RefinementMap:
    """Parent/child relations between a mesh and its red refinement.

    ``child_edge_signs`` is +1 when a child edge has the same global normal as
    its parent and -1 when it is reversed; the midpoint vertex is numbered
    after both endpoints, so the child touching the higher-index endpoint
    always comes out reversed.
    """

    child_triangles: np.ndarray  # (T_coarse, 4)
    child_edges: np.ndarray  # (E_coarse, 2)
    child_edge_signs: np.ndarray  # (E_coarse, 2)
    interior_edges: np.ndarray  # (T_coarse, 3), edge k is opposite fine vertex m_k
    vertex_embedding: np.ndarray  # (V_coarse,)


def _edge_key(a: np.ndarray, b: np.ndarray, nv: int) -> np.ndarray:
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * nv + hi


def _from_triangles(
    vertices: np.ndarray, triangles: np.ndarray, parent_cell: np.ndarray
) -> TriangleMesh:
    triangles = np.asarray(triangles, dtype=np.int64)
    nv = len(vertices)
    # local edge i is opposite local vertex i, traversed counterclockwise
    a = triangles[:, [1, 2, 0]]
    b = triangles[:, [2, 0, 1]]
    keys = _edge_key(a, b, nv).ravel()
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    edges = np.column_stack([uniq // nv, uniq % nv])
    tri_edges = inverse.reshape(-1, 3)
    # counterclockwise traversal agrees with the global tangent iff a < b;
    # the outward normal of a CCW traversal is its clockwise rotation
    tri_signs = np.where(a < b, 1, -1).astype(np.int8)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge: shared by more than two triangles")
    return TriangleMesh(
        vertices=np.asarray(vertices, dtype=float),
        triangles=triangles,
        edges=edges,
        tri_edges=tri_edges,
        tri_signs=tri_signs,
        boundary_edges=counts == 1,
        parent_cell=np.asarray(parent_cell, dtype=np.int64),
    )


def build_square_mesh(n: int) -> TriangleMesh:
    """Structured n x n triangulation of the unit square.

    Square ``(i, j)`` has index ``s = j*n + i`` and is cut along its
    lower-left to upper-right diagonal into triangles ``2s`` and ``2s+1``.
    """
    if n < 1:
        raise MeshError("grid resolution must be >= 1")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)  # row j holds y = x[j]
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = i + j * (n + 1)
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    return _from_triangles(vertices, tris, np.arange(len(tris)))


def uniform_refine(mesh: TriangleMesh) -> tuple[TriangleMesh, RefinementMap]:
    """Red refinement: split each triangle into four by its edge midpoints.

    Coarse vertices keep their indices; the midpoint of coarse edge ``e`` is
    fine vertex ``V + e``. Children of triangle ``t`` are ``4t .. 4t+3``, the
    last one being the middle triangle.
    """
    nv, ne = mesh.n_vertices, mesh.n_edges
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    t = mesh.triangles
    m = nv + mesh.tri_edges  # m[:, k] lies on the edge opposite vertex k
    children = np.stack(
        [
            np.column_stack([t[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], t[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], t[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    fine = _from_triangles(vertices, children, np.repeat(mesh.parent_cell, 4))

    nvf = fine.n_vertices
    fine_keys = fine.edges[:, 0] * nvf + fine.edges[:, 1]

    def lookup(a, b):
        idx = np.searchsorted(fine_keys, _edge_key(a, b, nvf))
        return idx

    mid = nv + np.arange(ne)
    child_edges = np.column_stack(
        [lookup(mesh.edges[:, 0], mid), lookup(mesh.edges[:, 1], mid)]
    )
    child_signs = np.tile(np.array([1, -1], dtype=np.int8), (ne, 1))
    interior = np.column_stack(
        [lookup(m[:, 1], m[:, 2]), lookup(m[:, 2], m[:, 0]), lookup(m[:, 0], m[:, 1])]
    )
    rmap = RefinementMap(
        child_triangles=np.arange(4 * mesh.n_triangles).reshape(-1, 4),
        child_edges=child_edges,
        child_edge_signs=child_signs,
        interior_edges=interior,
        vertex_embedding=np.arange(nv),
    )
    return fine, rmap


def distort_mesh(
    mesh: TriangleMesh,
    magnitude: float,
    seed: int,
    h: float | None = None,
    max_redraws: int = 200,
) -> TriangleMesh:
    """Randomly displace interior vertices by up to ``magnitude * h`` per axis.

    Vertices are visited in index order; a draw that would invert (or
    flatten) an incident triangle is rejected and redrawn. ``h`` defaults to
    the shortest edge, which is the grid spacing of a structured mesh.
    """
    if not 0.0 <= magnitude < 0.5:
        raise MeshError("magnitude must lie in [0, 0.5)")
    if magnitude == 0.0:
        return _from_triangles(mesh.vertices.copy(), mesh.triangles, mesh.parent_cell)
    if h is None:
        h = float(mesh.edge_lengths.min())
    rng = np.random.default_rng(seed)
    vertices = mesh.vertices.copy()
    offsets, v2t = mesh.vertex_triangles()
    delta = magnitude * h
    for v in mesh.interior_vertices:
        tris = mesh.triangles[v2t[offsets[v] : offsets[v + 1]]]
        origin = vertices[v].copy()
        for _ in range(max_redraws):
            vertices[v] = origin + rng.uniform(-delta, delta, size=2)
            p = vertices[tris]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            if np.all(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] > 0.0):
                break
        else:
            raise MeshError(
                f"no valid displacement for vertex {v} after {max_redraws} draws; "
                "magnitude too large"
            )
    return _from_triangles(vertices, mesh.triangles, mesh.parent_cell)


def check_mesh(mesh: TriangleMesh) -> None:
    """Raise MeshError unless all structural invariants hold."""
    if np.any(mesh.areas <= 0):
        raise MeshError("triangle with non-positive area")
    if mesh.n_vertices - mesh.n_edges + mesh.n_triangles != 1:
        raise MeshError("Euler relation V - E + T = 1 violated")
    if np.any(mesh.edges[:, 0] >= mesh.edges[:, 1]):
        raise MeshError("edges must list the lower vertex index first")
    counts = np.bincount(mesh.tri_edges.ravel(), minlength=mesh.n_edges)
    sums = np.bincount(
        mesh.tri_edges.ravel(), weights=mesh.tri_signs.ravel(), minlength=mesh.n_edges
    )
    interior = ~mesh.boundary_edges
    if np.any(counts[interior] != 2) or np.any(sums[interior] != 0):
        raise MeshError("interior edge not shared with opposite signs")
    if np.any(counts[mesh.boundary_edges] != 1):
        raise MeshError("boundary edge shared by more than one triangle")
    # sigma = +1 iff the global normal points away from the opposite vertex
    n = mesh.edge_normals[mesh.tri_edges]
    a = mesh.vertices[mesh.edges[mesh.tri_edges, 0]]
    outward = np.einsum("tkd,tkd->tk", mesh.corners - a, n) < 0
    if np.any(outward != (mesh.tri_signs > 0)):
        raise MeshError("incidence sign disagrees with normal direction")


def write_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    """Plain-text dump: ``V E T`` header, coordinates, edge pairs, triangles."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_edges} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        for a, b in mesh.edges:
            fh.write(f"{a} {b}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
