import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from saddlemg.hierarchy import (
    build_hierarchy,
    build_prolongation,
    level_patches,
    patch_kernel_matrix,
    restrict_residual,
    vertex_patches,
)
from saddlemg.mesh import build_square_mesh, distort_mesh
from saddlemg.mixed_fem import assemble_div, assemble_mass, interpolate_flux, rt0_evaluate


@pytest.fixture(scope="module")
def hier():
    return build_hierarchy(distort_mesh(build_square_mesh(4), 0.3, seed=7), 3)


def test_hierarchy_sizes():
    h = build_hierarchy(build_square_mesh(4), 4)
    assert [m.n_triangles for m in h.meshes] == [32, 128, 512, 2048]
    assert np.allclose(np.diff(np.log2(h.h)), -1.0)
    with pytest.raises(ValueError):
        build_hierarchy(build_square_mesh(4), 0)


def test_patch_counts_and_kernel_rank():
    mesh = build_square_mesh(8)
    pats = level_patches(mesh)
    assert len(pats) == 49
    Z = patch_kernel_matrix(mesh, pats)
    B = assemble_div(mesh)
    assert abs(B @ Z).max() == 0.0
    free = np.flatnonzero(~mesh.boundary_edges)
    assert not Z[mesh.boundary_edges].count_nonzero()
    # free kernel dimension = free edges - rank(B) = interior vertices
    assert len(free) - (mesh.n_triangles - 1) == 49 == np.linalg.matrix_rank(Z.toarray())


def test_patch_contents(hier):
    mesh = hier.meshes[1]
    for pat in vertex_patches(hier, 1):
        assert np.all((mesh.edges[pat.edge_ids] == pat.vertex).any(axis=1))
        assert np.all((mesh.triangles[pat.triangle_ids] == pat.vertex).any(axis=1))
        assert len(pat.edge_ids) == len(pat.triangle_ids)
        hi = mesh.edges[pat.edge_ids, 1] == pat.vertex
        assert np.array_equal(pat.kernel_vector, np.where(hi, 1.0, -1.0))


def test_prolongation_is_exact_inclusion(hier):
    rng = np.random.default_rng(1)
    for k in range(hier.J - 1):
        coarse, fine = hier.meshes[k], hier.meshes[k + 1]
        P = build_prolongation(hier, k)
        uc = rng.standard_normal(coarse.n_edges)
        uf = P @ uc
        # evaluate both fields at random points of each fine triangle
        child = hier.maps[k].child_triangles
        parent = np.repeat(np.arange(coarse.n_triangles), 4)
        kids = child.ravel()
        w = rng.dirichlet(np.ones(3), len(kids))
        pts = np.einsum("kc,kcd->kd", w, fine.corners[kids])
        assert np.allclose(rt0_evaluate(fine, uf, kids, pts), rt0_evaluate(coarse, uc, parent, pts))


def test_prolongation_commutes_with_divergence(hier):
    coarse, fine = hier.meshes[0], hier.meshes[1]
    P = build_prolongation(hier, 0)
    child = hier.maps[0].child_triangles
    C = sp.coo_matrix((np.full(child.size, 0.25), (child.ravel(), np.repeat(np.arange(coarse.n_triangles), 4))))
    assert abs(assemble_div(fine) @ P - C @ assemble_div(coarse)).max() < 1e-13


def test_galerkin_mass_equals_direct_for_identity():
    h = build_hierarchy(build_square_mesh(4), 2)
    P = build_prolongation(h, 0)
    Mg = P.T @ assemble_mass(h.meshes[1]) @ P
    assert abs(Mg - assemble_mass(h.meshes[0])).max() < 1e-12


def test_interpolation_of_rt0_field_is_preserved(hier):
    field = lambda x, y: (1.0 + 3.0 * x, -2.0 + 3.0 * y)
    P = build_prolongation(hier, 1)
    assert np.allclose(P @ interpolate_flux(hier.meshes[1], field), interpolate_flux(hier.meshes[2], field))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_restriction_is_adjoint(seed):
    h = build_hierarchy(build_square_mesh(2), 2)
    P = build_prolongation(h, 0)
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal(P.shape[0]), rng.standard_normal(P.shape[1])
    assert np.isclose(restrict_residual(P, r) @ v, r @ (P @ v))


def test_prolongation_bad_level(hier):
    with pytest.raises(ValueError):
        build_prolongation(hier, hier.J - 1)
