import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from pwlextremes.data import DISTRIBUTIONS, simulate
from pwlextremes.simplex import to_angle
from pwlextremes.threshold import ThresholdModel, check_loss, check_score, kernel_cdf


@pytest.fixture(scope="module")
def data_I():
    return to_angle(simulate(DISTRIBUTIONS["I"], 5000, 11).x)


@pytest.fixture(scope="module")
def data_III():
    return to_angle(simulate(DISTRIBUTIONS["III"], 5000, 12).x)


def test_single_point_median():
    m = ThresholdModel(np.array([2.0]), np.array([[0.3, 0.7]]))
    assert m.conditional_cdf(2.0, [0.3, 0.7]) == pytest.approx(0.5, abs=1e-15)


def test_cdf_limits():
    m = ThresholdModel(np.array([3.0, 4.0]), np.array([[0.3, 0.7], [0.6, 0.4]]))
    assert m.conditional_cdf(1e6, [0.5, 0.5]) == pytest.approx(1.0)
    assert m.conditional_cdf(1e-12, [0.5, 0.5]) <= 1e-12


def test_three_point_weighted_sum_oracle():
    r = np.array([1.0, 1.5, 2.2])
    w = np.array([[0.2, 0.8], [0.5, 0.5], [0.55, 0.45]])
    m = ThresholdModel(r, w, h_r=0.05, h_w=0.05)
    for wq in ([0.5, 0.5], [0.3, 0.7]):
        for rq in (1.0, 1.4, 2.0, 2.3):
            k = np.array([np.exp(-0.5 * np.sum((np.array(wq) - wi) ** 2) / 0.05 ** 2) for wi in w])
            oracle = np.sum(k * norm.cdf((rq - r) / 0.05)) / k.sum()
            assert m.conditional_cdf(rq, wq) == pytest.approx(oracle, abs=1e-12)


def test_degenerate_radii_median():
    w = np.random.default_rng(0).dirichlet([1, 1], 50)
    m = ThresholdModel(np.full(50, 5.0), w, tau=0.5)
    assert m.quantile([0.4, 0.6]) == pytest.approx(5.0, abs=1e-10)
    assert m.quantiles(np.array([[0.4, 0.6]]))[0] == pytest.approx(5.0, abs=1e-9)


@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
def test_inversion_contract(data_I, kernel):
    r, w = data_I
    m = ThresholdModel(r, w, kernel=kernel)
    grid = np.column_stack([np.linspace(0, 1, 15), 1 - np.linspace(0, 1, 15)])
    q = m.quantiles(grid)
    for wi, qi in zip(grid, q):
        assert m.conditional_cdf(qi, wi) == pytest.approx(0.95, abs=1e-8)
        assert qi == pytest.approx(m.quantile(wi), rel=1e-8)


def test_quantile_curve_against_binned_quantiles(data_III):
    r, w = data_III
    m = ThresholdModel(r, w)
    edges = np.linspace(0, 1, 11)
    for a, b in zip(edges[:-1], edges[1:]):
        inb = (w[:, 0] >= a) & (w[:, 0] < b)
        n = inb.sum()
        rs = np.sort(r[inb])
        # distribution-free order-statistic band for the 0.95 quantile
        half = 3 * np.sqrt(n * 0.05 * 0.95)
        lo = rs[max(int(np.floor(0.95 * n - half)), 0)]
        hi = rs[min(int(np.ceil(0.95 * n + half)), n - 1)]
        rt = m.quantiles(w[inb])
        assert lo <= np.median(rt) <= hi


def test_exceedance_fraction(data_I):
    r, w = data_I
    frac = ThresholdModel(r, w).exceedance_mask().mean()
    assert abs(frac - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / len(r))


def test_monotone_in_tau(data_I):
    r, w = data_I
    grid = np.random.default_rng(1).dirichlet([1, 1], 50)
    q = [ThresholdModel(r, w, tau=t).quantiles(grid) for t in (0.9, 0.95, 0.99)]
    assert np.all(q[0] <= q[1]) and np.all(q[1] <= q[2])


def test_kernel_agreement(data_I):
    r, w = data_I
    grid = np.column_stack([np.linspace(0, 1, 41), 1 - np.linspace(0, 1, 41)])
    g = ThresholdModel(r, w, kernel="gaussian").quantiles(grid)
    # an Epanechnikov kernel with sqrt(5) times the bandwidth has the same variance
    e = ThresholdModel(r, w, kernel="epanechnikov", h_r=0.05 * np.sqrt(5),
                       h_w=0.05 * np.sqrt(5)).quantiles(grid)
    assert np.median(np.abs(g - e) / g) <= 0.05


def test_interpolator_matches_exact(data_I):
    r, w = data_I
    m = ThresholdModel(r, w)
    q = np.random.default_rng(2).dirichlet([1, 1], 500)
    assert np.max(np.abs(m.interpolator()(q) / m.quantiles(q) - 1)) <= 0.01


def test_interpolator_d3():
    x = simulate(DISTRIBUTIONS["V"], 3000, 3).x
    r, w = to_angle(x)
    m = ThresholdModel(r, w)
    q = np.random.default_rng(3).dirichlet([1, 1, 1], 300)
    assert np.max(np.abs(m.interpolator()(q) / m.quantiles(q) - 1)) <= 0.02


def test_validation():
    with pytest.raises(ValueError):
        ThresholdModel(np.array([1.0]), np.array([[0.5, 0.5]]), tau=1.0)
    with pytest.raises(ValueError):
        ThresholdModel(np.array([1.0]), np.array([[0.5, 0.5]]), h_w=0)
    with pytest.raises(ValueError):
        ThresholdModel(np.array([1.0]), np.array([[0.5, 0.5]]), kernel="box")
    m = ThresholdModel(np.array([1.0, 2.0]), np.array([[0.0, 1.0], [0.01, 0.99]]),
                       kernel="epanechnikov")
    with pytest.raises(ValueError):
        m.quantile([1.0, 0.0])


def test_check_loss_values():
    assert check_loss(np.array([2.0]), 0.9)[0] == pytest.approx(1.8)
    assert check_loss(np.array([-2.0]), 0.9)[0] == pytest.approx(0.2)


def test_true_quantile_minimises_check_score():
    rng = np.random.default_rng(4)
    n = 200_000
    w = rng.uniform(size=n)
    r = rng.exponential(size=n) / (1 + w)
    q = -np.log(0.05) / (1 + w)
    s_true = np.mean(check_loss(r - q, 0.95))
    for f in (0.9, 1.1):
        s_bad = np.mean(check_loss(r - f * q, 0.95))
        se = np.std(check_loss(r - q, 0.95) - check_loss(r - f * q, 0.95)) / np.sqrt(n)
        assert s_true <= s_bad + 3 * se


def test_cv_prefers_moderate_bandwidth(data_I):
    r, w = data_I
    table, best = check_score(r, w, 0.95)
    assert 0.025 <= best <= 0.1
    assert set(table) == {0.01, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2}


def test_radial_bandwidth_matters_little(data_I):
    r, w = data_I
    table, _ = check_score(r, w, 0.95, grid=(0.01, 0.025, 0.05, 0.1, 0.2, 0.5), param="h_r")
    s = np.array(list(table.values()))
    assert (s.max() - s.min()) <= 0.02 * s.min()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 20), min_size=2, max_size=30), st.floats(0, 1),
       st.sampled_from(["gaussian", "epanechnikov"]))
def test_cdf_monotone_property(radii, w1, kernel):
    r = np.array(radii)
    w = np.column_stack([np.linspace(0, 1, len(r)), 1 - np.linspace(0, 1, len(r))])
    m = ThresholdModel(r, w, h_w=0.5, kernel=kernel)
    grid = np.linspace(0, 25, 200)
    F = m.conditional_cdf(grid, [w1, 1 - w1])
    assert np.all(np.diff(F) >= -1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.sampled_from(["gaussian", "epanechnikov"]))
def test_kernel_cdf_symmetry_property(u, kernel):
    assert kernel_cdf(np.array(u), kernel) + kernel_cdf(np.array(-u), kernel) == \
        pytest.approx(1.0, abs=1e-14)
