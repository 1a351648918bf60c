import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pwlextremes.simplex import (LaplaceMesh, SimplexMesh, delaunay_triangulate,
                                 laplace_decompose, laplace_recompose, make_regular_mesh,
                                 make_sparse_mesh, mesh_from_json, subface_centers, to_angle)

CENTRED4 = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1 / 3, 1 / 3, 1 / 3]])


def test_regular_d2_five_nodes():
    mesh = make_regular_mesh(2, 5)
    expect = [[0, 1], [.25, .75], [.5, .5], [.75, .25], [1, 0]]
    assert np.allclose(sorted(mesh.nodes.tolist()), expect)
    assert mesh.n_regions == 4


def test_regular_d3_node_and_region_counts():
    mesh = make_regular_mesh(3, 6)
    assert mesh.n_nodes == 28
    assert 28 - 2 <= mesh.n_regions <= 2 * 28 - 5


def test_regular_d2_rejects_even_and_small():
    with pytest.raises(ValueError):
        make_regular_mesh(2, 4)
    with pytest.raises(ValueError):
        make_regular_mesh(2, 1)
    with pytest.raises(ValueError):
        make_regular_mesh(5, 3)


def test_sparse_d4_counts_and_members():
    assert make_sparse_mesh(4, refine=True).n_nodes == 39
    mesh = make_sparse_mesh(4)
    nodes = mesh.nodes.tolist()
    for e in np.eye(4):
        assert e.tolist() in nodes
    assert any(np.allclose(n, 0.25) for n in mesh.nodes)


def test_sparse_d5_node_count_matches_subset_enumeration():
    # vertices + centre + centres of subfaces spanned by 2..4 coordinates
    count = 5 + 1 + sum(len(list(itertools.combinations(range(5), k))) for k in (2, 3, 4))
    assert make_sparse_mesh(5).n_nodes == count


def test_sparse_rejects_low_dimension():
    with pytest.raises(ValueError):
        make_sparse_mesh(3)


def test_delaunay_fig4_regions():
    mesh = delaunay_triangulate(CENTRED4)
    got = sorted(tuple(sorted(r)) for r in mesh.regions.tolist())
    assert got == sorted([(0, 2, 3), (1, 2, 3), (0, 1, 3)])


def test_delaunay_d2_is_sorted_partition():
    rng = np.random.default_rng(3)
    t = rng.uniform(size=9)
    mesh = delaunay_triangulate(np.column_stack([t, 1 - t]))
    order = np.argsort(t)
    assert mesh.n_regions == 8
    assert {tuple(sorted(r)) for r in mesh.regions.tolist()} == \
        {tuple(sorted(p)) for p in zip(order[:-1], order[1:])}


def test_delaunay_rejects_degenerate_and_bad_input():
    with pytest.raises(ValueError):
        delaunay_triangulate([[0.5, 0.5, 0.0], [0.25, 0.75, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        delaunay_triangulate([[0.6, 0.6, 0.0]])


def _circumsphere_empty(mesh, tol=1e-9):
    """Brute force: no node strictly inside any region's circumsphere (projected)."""
    p = mesh.nodes[:, :-1]
    for reg in mesh.regions:
        v = p[reg]
        A = 2 * (v[1:] - v[0])
        b = np.sum(v[1:] ** 2 - v[0] ** 2, axis=1)
        c = np.linalg.solve(A, b)
        rad2 = np.sum((v[0] - c) ** 2)
        others = np.delete(np.arange(len(p)), reg)
        if np.any(np.sum((p[others] - c) ** 2, axis=1) < rad2 - tol):
            return False
    return True


@pytest.mark.parametrize("d,n", [(3, 10), (3, 30), (4, 20)])
def test_delaunay_empty_circumsphere_random(d, n):
    rng = np.random.default_rng(d * 100 + n)
    nodes = np.vstack([np.eye(d), rng.dirichlet(np.ones(d), n - d)])
    assert _circumsphere_empty(delaunay_triangulate(nodes))


def test_delaunay_regular_grid_empty_circumsphere():
    assert _circumsphere_empty(make_regular_mesh(3, 6))


def test_locate_vertex_query_fig4():
    mesh = delaunay_triangulate(CENTRED4)
    k, b = mesh.locate([[1 / 3, 1 / 3, 1 / 3]])
    reg = mesh.regions[k[0]].tolist()
    assert 3 in reg
    assert b[0, reg.index(3)] == pytest.approx(1.0, abs=1e-12)


def test_locate_edge_midpoint_smallest_index():
    mesh = delaunay_triangulate(CENTRED4)
    k, b = mesh.locate([[0.5, 0.5, 0.0]])
    bary = mesh.barycentric([[0.5, 0.5, 0.0]])[0]
    valid = np.flatnonzero(bary.min(axis=1) >= -1e-10)
    assert k[0] == valid.min()
    assert set(mesh.regions[k[0]].tolist()) == {0, 1, 3}


def test_locate_covers_random_points():
    rng = np.random.default_rng(0)
    for mesh in (make_regular_mesh(2, 11), make_regular_mesh(3, 6), make_sparse_mesh(4)):
        w = rng.dirichlet(np.ones(mesh.dim), 1000)
        k, b = mesh.locate(w)
        assert np.all(b >= -1e-10)
        recon = np.einsum("ni,nij->nj", b, mesh.nodes[mesh.regions[k]])
        assert np.allclose(recon, w, atol=1e-12)


def test_locate_outside_raises():
    mesh = make_regular_mesh(3, 3)
    with pytest.raises(ValueError):
        mesh.locate([[0.8, 0.8, -0.6]])


def test_basis_interpolates_linear_functions():
    mesh = make_regular_mesh(3, 6)
    a = np.array([1.0, -2.0, 0.5])
    w = np.random.default_rng(1).dirichlet(np.ones(3), 200)
    assert np.allclose(mesh.basis(w) @ (mesh.nodes @ a), w @ a, atol=1e-12)


def test_neighbor_pairs_fig4():
    mesh = delaunay_triangulate(CENTRED4)
    # vertex e1 is shared by two regions, the centre by all three
    assert len(mesh.neighbor_pairs[0]) == 1
    assert len(mesh.neighbor_pairs[3]) == 3


def test_mesh_json_round_trip():
    mesh = make_regular_mesh(3, 4)
    back = SimplexMesh.from_json(mesh.to_json())
    assert np.array_equal(back.nodes, mesh.nodes) and np.array_equal(back.regions, mesh.regions)
    lap = LaplaceMesh.regular(12)
    assert np.array_equal(mesh_from_json(lap.to_json()).angles, lap.angles)


def test_subface_centers_d3():
    assert len(subface_centers(3)) == 7


# --- Laplace angles ---------------------------------------------------------

def test_laplace_examples():
    r, w = laplace_decompose(np.array([1.0, 1.0]))
    assert (r, w) == (2.0, 0.5)
    assert np.allclose(laplace_recompose(r, w), [1, 1])
    r, w = laplace_decompose(np.array([-1.0, 0.0]))
    assert r == 1.0 and w == -2.0
    assert np.allclose(laplace_recompose(r, w), [-1, 0], atol=0)
    r, w = laplace_decompose(np.array([0.0, 1.0]))
    assert r == 1.0 and w == 1.0
    assert np.allclose(laplace_recompose(r, w), [0, 1], atol=0)


def test_laplace_quadrant_signs():
    pts = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
    r, w = laplace_decompose(pts)
    assert np.allclose(w, [0.5, 1.5, -1.5, -0.5])


def test_laplace_round_trip_10k():
    x = np.random.default_rng(5).normal(size=(10_000, 2))
    r, w = laplace_decompose(x)
    assert np.all((w >= -2) & (w < 2))
    assert np.allclose(laplace_recompose(r, w), x, atol=1e-12)


def test_laplace_mesh_validation():
    with pytest.raises(ValueError):
        LaplaceMesh([-2.0, 0.0])
    with pytest.raises(ValueError):
        LaplaceMesh([-2.0, -1.0, 1.5])  # gap of 2.5 between -1 and 1.5


def test_laplace_mesh_basis_partition_of_unity_on_nodes():
    mesh = LaplaceMesh.regular(8)
    B = mesh.basis(mesh.angles)
    assert np.allclose(B, np.eye(8), atol=1e-12)


# --- properties -----------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 20), st.integers(2, 5)),
              elements=st.floats(1e-6, 1e6)))
def test_angle_round_trip_property(x):
    r, w = to_angle(x)
    assert np.allclose(r[:, None] * w, x, rtol=1e-12, atol=0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_angle_round_trip_10k():
    x = np.random.default_rng(2).exponential(size=(10_000, 3))
    r, w = to_angle(x)
    assert np.max(np.abs(r[:, None] * w - x)) <= 1e-12 * x.max()


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_laplace_round_trip_property(a, b):
    if abs(a) + abs(b) < 1e-9:
        return
    r, w = laplace_decompose(np.array([a, b]))
    assert -2 <= w < 2
    assert np.allclose(laplace_recompose(r, w), [a, b], rtol=1e-12, atol=1e-12 * r)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 4))
def test_locate_exactly_one_region_property(seed, d):
    rng = np.random.default_rng(seed)
    mesh = make_regular_mesh(3, 5) if d == 3 else make_sparse_mesh(4)
    w = rng.dirichlet(np.ones(d), 50)
    k1, _ = mesh.locate(w)
    k2, _ = mesh.locate(w)
    assert np.array_equal(k1, k2)
    b = mesh.barycentric(w)
    inside = (b.min(axis=2) >= -1e-10)
    assert np.all(inside.sum(axis=1) >= 1)
    assert np.all(k1 == inside.argmax(axis=1))
