import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import density_integral, gauge_by_cones, mc_volume, region_planes
from pwlextremes.gauge import (ParametricGauge, PwlGauge, gauge_from_function, gaussian,
                               logistic, project_gauge, set_partitions)
from pwlextremes.simplex import (LaplaceMesh, delaunay_triangulate, make_regular_mesh,
                                 make_sparse_mesh)

CENTRED4 = delaunay_triangulate(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1 / 3, 1 / 3, 1 / 3]]))


def random_gauge(d, seed):
    rng = np.random.default_rng(seed)
    mesh = make_regular_mesh(2, 11) if d == 2 else make_regular_mesh(3, 4)
    return PwlGauge(mesh, rng.uniform(0.4, 1.6, mesh.n_nodes))


def test_unit_diagonal_face():
    mesh = delaunay_triangulate(np.array([[0.0, 1.0], [1.0, 0.0]]))
    g = PwlGauge(mesh, [1.0, 1.0])
    x = np.array([[0.3, 0.2], [2.0, 5.0]])
    assert np.allclose(g.eval(x), x.sum(axis=1))
    n, denom = g.coplanar_and_normal(0)
    assert np.allclose(n / denom, [1, 1])


def test_fig4_centre_value():
    g = PwlGauge(CENTRED4, [0.5, 0.5, 0.5, 3.0])
    assert g.eval(np.array([1 / 3, 1 / 3, 1 / 3])) == pytest.approx(1 / 3, abs=1e-12)


def test_normals_orthogonal_to_coplanar_rows():
    g = random_gauge(3, 4)
    for k in range(g.mesh.n_regions):
        n, _ = g.coplanar_and_normal(k)
        assert np.allclose(g.coplanar[k] @ n, 0, atol=1e-10)


@pytest.mark.parametrize("c", [0.5, 1.0, 7.0])
def test_eval_at_scaled_nodes(c):
    g = random_gauge(3, 1)
    assert np.allclose(g.eval(c * g.mesh.nodes), c / g.theta, rtol=1e-12)


def test_gaussian_reference_values_d2():
    mesh = make_regular_mesh(2, 5)
    gN = gaussian(0.8)
    g = gauge_from_function(mesh, gN.eval)
    assert np.allclose(g.eval(mesh.nodes), gN.eval(mesh.nodes), rtol=1e-12)


def test_boundary_continuity():
    g = random_gauge(3, 2)
    A = region_planes(g.mesh, g.theta)
    rng = np.random.default_rng(0)
    for i, j in {p for pairs in g.mesh.neighbor_pairs for p in pairs}:
        shared = sorted(set(g.mesh.regions[i]) & set(g.mesh.regions[j]))
        t = rng.uniform(size=(5, 1))
        pts = t * g.mesh.nodes[shared[0]] + (1 - t) * g.mesh.nodes[shared[1]]
        assert np.all(np.abs(pts @ A[i] - pts @ A[j]) <= 1e-9)


def test_eval_matches_cone_oracle():
    for d, seed in [(2, 0), (3, 1), (3, 2)]:
        g = random_gauge(d, seed)
        x = np.random.default_rng(seed).exponential(size=(500, d))
        assert np.allclose(g.eval(x), gauge_by_cones(g.mesh, g.theta, x), rtol=1e-10)


def test_gradient_dotted_with_vertices_is_one():
    g = random_gauge(3, 5)
    V = g.scaled_vertices
    assert np.allclose(np.einsum("kij,kj->ki", V, g.gradients), 1.0, atol=1e-12)


def test_gradient_matches_finite_differences():
    g = random_gauge(3, 6)
    rng = np.random.default_rng(1)
    h = 1e-5
    for k in range(0, g.mesh.n_regions, 3):
        b = rng.dirichlet(np.ones(3) * 5)
        x = 2.0 * b @ g.mesh.nodes[g.mesh.regions[k]]
        fd = [(g.eval(x + h * e) - g.eval(x - h * e)) / (2 * h) for e in np.eye(3)]
        assert np.allclose(fd, g.region_gradient(k), atol=1e-6)


def test_linear_gauge_gradients_constant():
    mesh = make_regular_mesh(2, 7)
    g = gauge_from_function(mesh, lambda w: 2 * w[:, 0] + 3 * w[:, 1])
    assert np.allclose(g.gradients, [2, 3])
    assert g.penalty() == pytest.approx(0, abs=1e-25)


@pytest.mark.parametrize("mesh", [make_regular_mesh(2, 9), make_regular_mesh(3, 6),
                                  make_sparse_mesh(4)])
def test_penalty_exactly_zero_on_simplex_plane(mesh):
    assert PwlGauge(mesh, np.full(mesh.n_nodes, 0.7)).penalty() == 0.0


def test_volume_examples():
    mesh = delaunay_triangulate(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert PwlGauge(mesh, [1, 1]).volume() == pytest.approx(0.5)
    for mesh in (make_regular_mesh(3, 5), make_sparse_mesh(4)):
        import math
        assert PwlGauge(mesh, np.ones(mesh.n_nodes)).volume() == pytest.approx(
            1 / math.factorial(mesh.dim), rel=1e-12)


def test_volume_fig4_against_rejection():
    g = PwlGauge(CENTRED4, [0.5, 0.5, 0.5, 3.0])
    vol, se = mc_volume(CENTRED4, g.theta, 2_000_000, seed=3)
    assert abs(g.volume() - vol) <= max(3 * se, 0.005 * vol)


def test_density_normalisation():
    assert density_integral(random_gauge(2, 7)) == pytest.approx(1.0, abs=1e-6)
    val, se = density_integral(random_gauge(3, 7))
    assert abs(val - 1) <= max(4 * se, 1e-3)


def test_laplace_gauge_volume_matches_quadrature():
    mesh = LaplaceMesh.regular(12)
    g = PwlGauge(mesh, np.random.default_rng(0).uniform(0.5, 1.5, 12))
    from scipy import integrate
    # area = int over the L1 unit circle of 1/(2 g^2), dw having unit speed in w
    f = lambda w: 0.5 / g.eval_angles(np.array([w]))[0] ** 2
    area = sum(integrate.quad(f, a, b)[0] for a, b in zip(np.append(mesh.angles, 2)[:-1],
                                                             np.append(mesh.angles, 2)[1:]))
    assert g.volume() == pytest.approx(area, rel=1e-8)


def test_penalty_fig4_neighbour_sets():
    pairs = CENTRED4.neighbor_pairs
    assert len(pairs[0]) == 1 and len(pairs[3]) == 3
    assert set(pairs[3]) == {(0, 1), (0, 2), (1, 2)}


def test_penalty_increases_when_theta_doubled():
    mesh = make_regular_mesh(3, 4)
    g = gauge_from_function(mesh, lambda w: w @ np.array([1.0, 2.0, 1.5]))
    assert g.penalty() == pytest.approx(0, abs=1e-20)
    for k in range(mesh.n_nodes):
        th = g.theta.copy()
        th[k] *= 2
        assert PwlGauge(mesh, th).penalty() > 0


def test_penalty_zero_iff_gradients_equal():
    g = random_gauge(3, 8)
    assert g.penalty() > 0 and g.max_gradient_gap() > 0


def test_parametric_examples():
    for a in (0.2, 0.5, 0.9):
        assert logistic(a, 3).eval(np.ones(3)) == pytest.approx(1.0)
    assert gaussian(0.8).eval(np.array([0.5, 0.5])) == pytest.approx(0.2 / 0.36)
    il = ParametricGauge("inverted_logistic", {"alpha": 0.7}, 2)
    assert il.eval(np.array([1.0, 1e-12])) == pytest.approx(1.0, abs=1e-6)


def test_parametric_validation():
    with pytest.raises(ValueError):
        logistic(1.5)
    with pytest.raises(ValueError):
        gaussian(1.0)
    with pytest.raises(ValueError):
        ParametricGauge("asymmetric_logistic", {"sets": [(0, 1)], "alphas": [0.5]}, 3)


def test_alog_reduces_to_logistic():
    g = ParametricGauge("asymmetric_logistic", {"sets": [(0, 1)], "alphas": [0.4]}, 2)
    x = np.random.default_rng(0).exponential(size=(50, 2))
    assert np.allclose(g.eval(x), logistic(0.4).eval(x))


def test_set_partitions_bell_numbers():
    assert [len(list(set_partitions(range(n)))) for n in range(1, 6)] == [1, 2, 5, 15, 52]


def test_mixture_is_pointwise_min():
    a, b = logistic(0.4), gaussian(0.5)
    m = ParametricGauge("mixture", {"components": [a, b], "p": 0.3}, 2)
    x = np.random.default_rng(1).exponential(size=(40, 2))
    assert np.allclose(m.eval(x), np.minimum(a.eval(x), b.eval(x)))


def test_projection_independent_coordinate():
    base = logistic(0.5, 3)
    g4 = lambda x: base.eval(x[:, :3]) + 0.0 * x[:, 3]
    proj = project_gauge(g4, 4, [3])
    y = np.random.default_rng(2).dirichlet(np.ones(3), 20)
    assert np.allclose(proj(y), base.eval(y))


def test_projection_bounded_by_lifts_and_refines():
    alog = ParametricGauge("asymmetric_logistic",
                           {"sets": [(0, 1), (2, 3), (0, 1, 2, 3)], "alphas": [0.5, 0.5, 0.4]}, 4)
    y = np.random.default_rng(3).dirichlet(np.ones(3), 10)
    coarse = project_gauge(alog, 4, [3], 50)(y)
    fine = project_gauge(alog, 4, [3], 200)(y)
    assert np.max(np.abs(coarse - fine)) <= 1e-2
    lifts = np.column_stack([y, np.full(10, 0.37)])
    assert np.all(coarse <= alog.eval(lifts) + 1e-12)


def test_gauge_json_round_trip():
    g = random_gauge(3, 9)
    back = PwlGauge.from_json(g.to_json())
    assert np.array_equal(back.theta, g.theta)


def test_theta_validation():
    mesh = make_regular_mesh(2, 5)
    with pytest.raises(ValueError):
        PwlGauge(mesh, [1, 1, 1, 1])
    with pytest.raises(ValueError):
        PwlGauge(mesh, [1, 1, -1, 1, 1])


# --- properties ----------------------------------------------------------------

theta3 = st.lists(st.floats(0.2, 5.0), min_size=15, max_size=15)


@settings(max_examples=60, deadline=None)
@given(theta3, st.sampled_from([0.1, 1.0, 10.0, 1000.0]), st.integers(0, 10_000))
def test_homogeneity_property(theta, c, seed):
    g = PwlGauge(make_regular_mesh(3, 4), theta)
    x = np.random.default_rng(seed).exponential(size=(20, 3))
    assert np.allclose(g.eval(c * x), c * g.eval(x), rtol=1e-12, atol=0)


@settings(max_examples=60, deadline=None)
@given(theta3)
def test_vertices_on_unit_level_set_property(theta):
    g = PwlGauge(make_regular_mesh(3, 4), theta)
    pts = g.theta[:, None] * g.mesh.nodes
    assert np.allclose(g.eval(pts), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(theta3)
def test_penalty_nonnegative_and_volume_positive_property(theta):
    g = PwlGauge(make_regular_mesh(3, 4), theta)
    assert g.penalty() >= 0
    assert g.volume() > 0
