"""Model checks: PIT/PP/QQ data, return-level sets, chi_C(u), limit-set export."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainccinv, gammaincinv

from .fitting import _log_gamma_sf
from .gauge import project_gauge
from .sampling import ExtremalRegion, probability_from_sample, sample_exceedances


def simplex_grid(d, m):
    """All points of the simplex with coordinates in {0, 1/m, ..., 1}."""
    pts = [c for c in itertools.product(range(m + 1), repeat=d - 1) if sum(c) <= m]
    a = np.array(pts, dtype=float)
    return np.column_stack([a, m - a.sum(axis=1)]) / m


def default_angle_grid(d, laplace=False, size=None):
    if laplace:
        return -2.0 + 4.0 * np.arange(size or 500) / (size or 500)
    if d == 2:
        t = np.linspace(0, 1, size or 500)
        return np.column_stack([t, 1 - t])
    # smallest regular grid with at least ``size`` points
    target = size or {3: 2000}.get(d, 10_000)
    m = 1
    while len(simplex_grid(d, m)) < target:
        m += 1
    return simplex_grid(d, m)


# --- PIT, PP and QQ ---------------------------------------------------------------

def pit(model, exceedances=None):
    """U_i = [F(r_i) - F(r_tau_i)] / [1 - F(r_tau_i)] under the fitted truncated gamma."""
    ex = model.exceedances if exceedances is None else exceedances
    g = model.radial_gauge.eval_angles(ex.w)
    d = model.mesh.dim
    return -np.expm1(_log_gamma_sf(ex.r, d, g) - _log_gamma_sf(ex.r_tau, d, g))


def pp_qq_data(model, exceedances=None):
    """Columns empirical_p (sorted U), model_p (i/(n+1)) and their standard-exponential
    quantiles empirical_q, model_q."""
    u = np.sort(pit(model, exceedances))
    n = len(u)
    p = np.arange(1, n + 1) / (n + 1)
    return {"empirical_p": u, "model_p": p, "empirical_q": -np.log1p(-u), "model_q": -np.log1p(-p)}


# --- return-level sets ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReturnCurve:
    T: float
    w: np.ndarray
    r: np.ndarray

    def points(self, laplace=False):
        from .simplex import laplace_recompose
        if laplace:
            return laplace_recompose(self.r, np.ravel(self.w))
        return self.r[:, None] * self.w


def return_radius(gauge, T, w, d=None):
    """Gamma quantile F^-1(1 - 1/T; d, g(w)) along angles ``w``."""
    d = gauge.dim if d is None else d
    return gammaincinv(d, 1.0 - 1.0 / T) / gauge.eval_angles(w)


def return_curve(model, T, w=None, conditional=False):
    """Return-level set R(T) from the fitted radial gauge.

    By default the radius is the gamma (1 - 1/T)-quantile. With
    ``conditional=True`` it instead solves
    (1 - tau) * S(r) / S(r_tau(w)) = 1/T, anchoring on the KDE threshold.
    """
    tau = model.threshold.tau
    if T < 1.0 / (1.0 - tau) * (1 - 1e-12):
        raise ValueError(f"T must be at least 1/(1 - tau) = {1 / (1 - tau):g}")
    gauge = model.radial_gauge
    if w is None:
        w = default_angle_grid(gauge.dim, model.laplace)
    if not conditional:
        return ReturnCurve(T, w, return_radius(gauge, T, w))
    g = gauge.eval_angles(w)
    d = gauge.dim
    r_tau = model.threshold.quantiles(w)
    log_s = _log_gamma_sf(r_tau, d, g) - np.log(T * (1 - tau))
    return ReturnCurve(T, w, gammainccinv(d, np.exp(log_s)) / g)


def beyond_curve(x, gauge, T, laplace=False):
    """Whether each point lies beyond R(T): ||x|| > F^-1(1 - 1/T; d, g(w))."""
    from .fitting import decompose
    r, w = decompose(x, laplace)
    return r > return_radius(gauge, T, w)


# --- chi -------------------------------------------------------------------------

def exp_cdf(x):
    return -np.expm1(-np.asarray(x, dtype=float))


def exp_quantile(u):
    return -np.log1p(-np.asarray(u, dtype=float))


def u0(threshold_fn, C, d, grid=None):
    """Smallest valid u: F_X(max_w min_{j in C} r_tau(w) w_j) over an angle mesh."""
    if grid is None:
        grid = default_angle_grid(d, size={2: 1000, 3: 1000}.get(d, 10_000))
    C = list(C)
    return float(exp_cdf(np.max(threshold_fn(grid) * grid[:, C].min(axis=1))))


def chi_region(C, u, d):
    lower = np.zeros(d)
    lower[list(C)] = exp_quantile(u)
    return ExtremalRegion(tuple(lower), (np.inf,) * d)


def chi_empirical(x, C, u, ranks=False):
    """(1 - u)^-1 times the fraction of rows with F(x_j) > u for all j in C.

    F is the standard exponential CDF, or rank/n when ``ranks`` is set.
    """
    x = np.asarray(x, dtype=float)
    C = list(C)
    if ranks:
        F = (np.argsort(np.argsort(x[:, C], axis=0), axis=0) + 1) / len(x)
    else:
        F = exp_cdf(x[:, C])
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.array([np.mean(np.all(F > ui, axis=1)) / (1 - ui) for ui in u])


def chi_bootstrap(x, C, u, n_boot=200, level=0.95, seed=0):
    """Plain i.i.d. bootstrap band for the empirical chi: (lower, upper) arrays."""
    rng = np.random.default_rng(seed)
    n = len(x)
    reps = np.array([chi_empirical(x[rng.integers(0, n, n)], C, u) for _ in range(n_boot)])
    a = (1 - level) / 2
    return np.quantile(reps, a, axis=0), np.quantile(reps, 1 - a, axis=0)


@dataclass(frozen=True, eq=False)
class ChiEstimate:
    C: tuple
    u: np.ndarray
    model: np.ndarray
    se: np.ndarray
    u0: float
    empirical: np.ndarray | None = None

    def rows(self):
        emp = self.empirical if self.empirical is not None else np.full(len(self.u), np.nan)
        return list(zip(self.u, emp, self.model, self.se))


def chi_model(model, sampler, C, u, n_star=50_000, seed=None, data=None, threshold_fn=None,
              check_u0=True):
    """Model-based chi_C(u) from one simulated exceedance sample.

    Levels below u0 are rejected. ``data`` (exponential margins) adds the
    empirical values.
    """
    d = model.mesh.dim
    u = np.atleast_1d(np.asarray(u, dtype=float))
    C = tuple(C)
    if threshold_fn is None:
        threshold_fn = model.threshold.interpolator()
    lo = u0(threshold_fn, C, d)
    if check_u0 and np.any(u < lo):
        raise ValueError(f"u must be at least u0 = {lo:.6f}")
    x, _, _ = sample_exceedances(model, sampler, n_star, seed, threshold_fn)
    est = probability_from_sample(x, [chi_region(C, ui, d) for ui in u], model.exceedances.fraction)
    vals = np.array([e.estimate for e in est]) / (1 - u)
    se = np.array([e.se for e in est]) / (1 - u)
    emp = None if data is None else chi_empirical(data, C, u)
    return ChiEstimate(C, u, vals, se, lo, emp)


# --- limit-set export --------------------------------------------------------------

def export_limit_set(gauge, resolution=None, mesh_size=50):
    """Unit level set samples.

    d <= 3 (and Laplace): {"full": (w, r)} with r = 1/g(w). d = 4: one entry
    per dropped coordinate j, with (w over the kept coordinates, r) for the
    projected gauge.
    """
    d = gauge.dim
    if gauge.mesh.laplace or d <= 3:
        w = default_angle_grid(d, gauge.mesh.laplace, resolution)
        return {"full": (w, 1.0 / gauge.eval_angles(w))}
    if d != 4:
        raise ValueError("projections are exported for d = 4 only")
    w = default_angle_grid(3, size=resolution or 500)
    out = {}
    for j in range(d):
        proj = project_gauge(gauge, d, [j], mesh_size)
        out[f"drop{j + 1}"] = (w, 1.0 / proj(w))
    return out


# --- CSV writers ------------------------------------------------------------------

def write_ppqq(path, data):
    cols = ["empirical_p", "model_p", "empirical_q", "model_q"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        wr.writerows(zip(*(data[c] for c in cols)))


def write_return_curve(path, curve):
    w = np.atleast_2d(np.asarray(curve.w).T).T
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"w{j + 1}" for j in range(w.shape[1])] + ["r"])
        for row, r in zip(w, curve.r):
            wr.writerow([*row, r])


def write_chi(path, chi):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["u", "empirical", "model", "se"])
        wr.writerows(chi.rows())


def write_limit_set(path, w, r):
    w = np.atleast_2d(np.asarray(w).T).T
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"w{j + 1}" for j in range(w.shape[1])] + ["r"])
        for row, v in zip(w, r):
            wr.writerow([*row, v])
