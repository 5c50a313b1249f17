import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saddlemg.mesh import (
    MeshError,
    build_square_mesh,
    check_mesh,
    distort_mesh,
    uniform_refine,
    write_mesh,
)


@pytest.mark.parametrize("n,T,V,E", [(4, 32, 25, 56), (8, 128, 81, 208), (32, 2048, 1089, 3136)])
def test_square_mesh_counts(n, T, V, E):
    mesh = build_square_mesh(n)
    assert (mesh.n_triangles, mesh.n_vertices, mesh.n_edges) == (T, V, E)
    check_mesh(mesh)
    assert np.isclose(mesh.areas.sum(), 1.0)


def test_orientation_conventions():
    mesh = build_square_mesh(4)
    assert np.all(mesh.edges[:, 0] < mesh.edges[:, 1])
    # normal is the tangent turned clockwise
    t = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    n = mesh.edge_normals
    assert np.allclose(n[:, 0], t[:, 1] / mesh.edge_lengths)
    assert np.allclose(n[:, 1], -t[:, 0] / mesh.edge_lengths)
    assert mesh.boundary_edges.sum() == 16


def test_refine_counts_and_areas():
    mesh = build_square_mesh(4)
    fine, rmap = uniform_refine(mesh)
    assert fine.n_triangles == 128 and fine.n_edges == 2 * 56 + 3 * 32
    check_mesh(fine)
    kids = fine.areas[rmap.child_triangles]
    assert np.allclose(kids, mesh.areas[:, None] / 4)
    assert np.array_equal(fine.parent_cell, np.repeat(mesh.parent_cell, 4))


def test_refine_three_times_matches_table_size():
    mesh = build_square_mesh(8)
    for _ in range(3):
        mesh, _ = uniform_refine(mesh)
    assert mesh.n_triangles == 8192 and mesh.n_edges == 12416
    assert mesh.n_edges + mesh.n_triangles == 20608


def test_child_edges_are_halves_with_recorded_direction():
    mesh = build_square_mesh(4)
    fine, rmap = uniform_refine(mesh)
    for e in range(mesh.n_edges):
        for child, s in zip(rmap.child_edges[e], rmap.child_edge_signs[e]):
            assert np.isclose(fine.edge_lengths[child], mesh.edge_lengths[e] / 2)
            assert np.allclose(fine.edge_normals[child], s * mesh.edge_normals[e])
            assert fine.boundary_edges[child] == mesh.boundary_edges[e]


def test_distort_zero_is_identity():
    mesh = build_square_mesh(4)
    out = distort_mesh(mesh, 0.0, seed=3)
    assert np.array_equal(out.vertices, mesh.vertices)
    assert np.array_equal(out.triangles, mesh.triangles)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_distort_keeps_valid_mesh(seed):
    mesh = build_square_mesh(4)
    out = distort_mesh(mesh, 0.4, seed=seed)
    check_mesh(out)
    b = mesh.boundary_vertices
    assert np.array_equal(out.vertices[b], mesh.vertices[b])
    assert np.abs(out.vertices - mesh.vertices).max() <= 0.4 * 0.25 + 1e-15


def test_distort_is_deterministic():
    mesh = build_square_mesh(4)
    a = distort_mesh(mesh, 0.4, seed=1)
    b = distort_mesh(mesh, 0.4, seed=1)
    assert np.array_equal(a.vertices, b.vertices)
    assert a.areas.min() > 0


def test_distort_rejects_large_magnitude():
    with pytest.raises(MeshError):
        distort_mesh(build_square_mesh(4), 0.6, seed=1)


def test_check_mesh_detects_inverted_triangle():
    mesh = build_square_mesh(2)
    bad = mesh.vertices.copy()
    bad[4] = [1.2, 0.2]  # centre vertex pushed across edge 2-5
    from saddlemg.mesh import _from_triangles

    with pytest.raises(MeshError):
        check_mesh(_from_triangles(bad, mesh.triangles, mesh.parent_cell))


def test_write_mesh(tmp_path):
    mesh = build_square_mesh(2)
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"{mesh.n_vertices} {mesh.n_edges} {mesh.n_triangles}"
    assert len(lines) == 1 + mesh.n_vertices + mesh.n_edges + mesh.n_triangles
