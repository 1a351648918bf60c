"""Kernel estimate of the conditional radial quantile r_tau(w)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

KERNELS = ("gaussian", "epanechnikov")
_SQRT2PI = np.sqrt(2 * np.pi)
# standardised radius beyond which the kernel CDF is 0 or 1 to double precision
_SUPPORT = {"gaussian": 8.5, "epanechnikov": 1.0}


def _as_angles(w):
    w = np.asarray(w, dtype=float)
    return w[:, None] if w.ndim == 1 else w


def kernel_pdf(u, kind):
    if kind == "gaussian":
        return np.exp(-0.5 * u * u) / _SQRT2PI
    return np.where(np.abs(u) < 1, 0.75 * (1 - u * u), 0.0)


def kernel_cdf(u, kind):
    if kind == "gaussian":
        return ndtr(u)
    u = np.clip(u, -1.0, 1.0)
    return 0.75 * (u * (1 - u * u / 3) + 2.0 / 3)


def angular_weights(wq, w, h, kind):
    """Unnormalised product-kernel weights, shape (len(wq), len(w))."""
    diff = (wq[:, None, :] - w[None, :, :]) / h
    if kind == "gaussian":
        return np.exp(-0.5 * np.sum(diff * diff, axis=2))
    inside = np.all(np.abs(diff) < 1, axis=2)
    return np.where(inside, np.prod(1 - diff * diff, axis=2), 0.0)


@dataclass(frozen=True, eq=False)
class ThresholdModel:
    """Kernel-smoothed conditional CDF of R given W, inverted at level ``tau``.

    ``w`` holds simplex angles (n, d) or scalar Laplace angles (n,).
    """

    r: np.ndarray
    w: np.ndarray
    tau: float = 0.95
    h_r: float = 0.05
    h_w: float = 0.05
    kernel: str = "gaussian"
    chunk: int = field(default=256, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        w = _as_angles(self.w)
        if r.ndim != 1 or len(r) == 0 or len(w) != len(r):
            raise ValueError("need matching, nonempty radii and angles")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.h_r <= 0 or self.h_w <= 0:
            raise ValueError("bandwidths must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "w", w)

    def _weights(self, wq):
        W = angular_weights(wq, self.w, self.h_w, self.kernel)
        tot = W.sum(axis=1)
        if np.any(tot <= 0):
            raise ValueError("no data within the angular kernel support: sparse region")
        return W / tot[:, None]

    def conditional_cdf(self, r, w):
        """F(r | w) for one angle and scalar or array ``r``."""
        W = self._weights(np.asarray(w, dtype=float).reshape(1, -1))[0]
        r = np.asarray(r, dtype=float)
        u = (r[..., None] - self.r) / self.h_r
        return kernel_cdf(u, self.kernel) @ W

    def _upper(self):
        return self.r.max() + 10 * self.h_r

    def quantile(self, w):
        """r_tau at a single angle by Brent's method on [0, max r + 10 h_R]."""
        Wt = self._weights(np.asarray(w, dtype=float).reshape(1, -1))[0]

        def f(r):
            return float(kernel_cdf((r - self.r) / self.h_r, self.kernel) @ Wt) - self.tau

        lo, hi = 0.0, self._upper()
        while f(hi) < 0:
            hi *= 2
        if f(lo) > 0:
            raise ValueError("conditional CDF exceeds tau at zero; no bracket")
        return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)

    def quantiles(self, w, tol=1e-10, maxiter=100):
        """r_tau at many angles: bracketed Newton iteration, vectorised over angles.

        Queries are processed in spatially local chunks so that data points with
        negligible angular weight (below 1e-15 of the total) can be skipped.
        """
        wq = _as_angles(w)
        out = np.empty(len(wq))
        band = np.floor(wq[:, 0] / (2 * self.h_w))
        qorder = np.lexsort((wq[:, -1], band))
        for s in range(0, len(wq), self.chunk):
            idx = qorder[s:s + self.chunk]
            W = self._weights(wq[idx])
            keep = W.max(axis=0) > 1e-15
            W, r = W[:, keep], self.r[keep]
            order = np.argsort(r)
            out[idx] = self._solve(W[:, order], r[order], tol, maxiter)
        return out

    def _solve(self, W, r, tol, maxiter):
        """Newton with bisection safeguard; ``r`` sorted ascending, W columns to match.

        Only data within the radial kernel's effective support of the current
        iterate are evaluated; mass entirely below it comes from a prefix sum.
        """
        q = W.shape[0]
        cw = np.cumsum(W, axis=1)
        cw0 = np.hstack([np.zeros((q, 1)), cw])
        reach = _SUPPORT[self.kernel] * self.h_r
        # start from the kernel-weighted empirical quantile
        x = r[np.minimum((cw < self.tau).sum(axis=1), len(r) - 1)]
        lo = np.zeros(q)
        hi = np.full(q, self._upper())
        active = np.ones(q, dtype=bool)
        for _ in range(maxiter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xi = x[idx]
            a = np.searchsorted(r, xi - reach)
            b = np.searchsorted(r, xi + reach)
            width = max(int((b - a).max()), 1)
            cols = a[:, None] + np.arange(width)
            valid = cols < b[:, None]
            cols = np.minimum(cols, len(r) - 1)
            Wi = np.where(valid, W[idx[:, None], cols], 0.0)
            u = (xi[:, None] - r[cols]) / self.h_r
            F = cw0[idx, a] + np.einsum("ij,ij->i", kernel_cdf(u, self.kernel), Wi) - self.tau
            dF = np.einsum("ij,ij->i", kernel_pdf(u, self.kernel), Wi) / self.h_r
            lo[idx] = np.where(F < 0, xi, lo[idx])
            hi[idx] = np.where(F > 0, xi, hi[idx])
            done = (np.abs(F) <= tol) | (hi[idx] - lo[idx] <= 1e-13 * np.maximum(1, hi[idx]))
            with np.errstate(divide="ignore", invalid="ignore"):
                step = xi - F / dF
            bad = ~np.isfinite(step) | (step <= lo[idx]) | (step >= hi[idx])
            step = np.where(bad, 0.5 * (lo[idx] + hi[idx]), step)
            x[idx] = np.where(done, xi, step)
            active[idx[done]] = False
        return x

    def interpolator(self, resolution=None, rel_range=0.02):
        """Cheap evaluation of r_tau for large query sets.

        Exact quantiles on a regular angle grid (scalar angles: 2000 cells;
        d=3: 100 divisions per edge) are interpolated linearly within grid
        cells. Where the grid values of a cell differ by more than ``rel_range``
        in relative terms (steep or jumping quantile curves), the query is
        solved exactly instead. For d >= 4 the exact solver is returned.
        """
        d = self.w.shape[1]
        if d == 1 or d == 2:
            m = resolution or 2000
            lo, hi = (-2.0, 2.0) if d == 1 else (0.0, 1.0)
            t = np.linspace(lo, hi, m + 1)
            grid = t[:, None] if d == 1 else np.column_stack([t, 1 - t])
            vals = self.quantiles(grid)

            def cells(wq):
                a = (wq[:, 0] - lo) / (hi - lo) * m
                i = np.clip(np.floor(a).astype(int), 0, m - 1)
                f = a - i
                return np.column_stack([i, i + 1]), np.column_stack([1 - f, f])
        elif d == 3:
            m = resolution or 100
            index = np.full((m + 1, m + 1), -1)
            ij = np.array([(i, j) for i in range(m + 1) for j in range(m + 1 - i)])
            index[ij[:, 0], ij[:, 1]] = np.arange(len(ij))
            pts = ij / m
            vals = self.quantiles(np.column_stack([pts, 1 - pts.sum(1)]))

            def cells(wq):
                a, b = wq[:, 0] * m, wq[:, 1] * m
                i = np.clip(np.floor(a).astype(int), 0, m - 1)
                j = np.clip(np.floor(b).astype(int), 0, m - 1 - i)
                fa, fb = a - i, b - j
                upper = (fa + fb > 1) & (i + j < m - 1)
                v0 = np.where(upper, index[i + 1, np.minimum(j + 1, m)], index[i, j])
                v1, v2 = index[i + 1, j], index[i, j + 1]
                w0 = np.where(upper, fa + fb - 1, 1 - fa - fb)
                w1 = np.where(upper, 1 - fb, fa)
                w2 = np.where(upper, 1 - fa, fb)
                return np.column_stack([v0, v1, v2]), np.column_stack([w0, w1, w2])
        else:
            return self.quantiles

        def evaluate(w):
            wq = _as_angles(w)
            v, lam = cells(wq)
            cv = vals[v]
            out = np.einsum("ij,ij->i", cv, lam)
            steep = cv.max(1) > (1 + rel_range) * cv.min(1)
            if steep.any():
                out[steep] = self.quantiles(wq[steep])
            return out

        return evaluate

    def exceedance_mask(self, r=None, w=None):
        """Which points lie strictly above the threshold (defaults to the model's data)."""
        r = self.r if r is None else np.asarray(r, dtype=float)
        w = self.w if w is None else _as_angles(w)
        return r > self.quantiles(w)

    def write_curve(self, path, w):
        wq = _as_angles(w)
        rt = self.quantiles(wq)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"w{j + 1}" for j in range(wq.shape[1])] + ["r_tau"])
            for row, v in zip(wq, rt):
                wr.writerow([*row, v])


def check_loss(u, tau):
    return u * (tau - (u < 0))


def check_score(r, w, tau, folds=5, grid=(0.01, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2),
                param="h_w", seed=0, **model_kw):
    """K-fold cross-validated check-function score for each hyperparameter value.

    Each fold holds out floor(n/K) points; returns ({value: S}, best value) where
    the best value minimises S.
    """
    r = np.asarray(r, dtype=float)
    w = _as_angles(w)
    n = len(r)
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and n >= folds")
    n_eval = n // folds
    perm = np.random.default_rng(seed).permutation(n)
    table = {}
    for value in grid:
        scores = []
        for k in range(folds):
            ev = perm[k * n_eval:(k + 1) * n_eval]
            if ev.size == 0:
                raise ValueError("empty fold")
            fit = np.setdiff1d(perm, ev, assume_unique=True)
            kw = dict(model_kw, **{param: value})
            model = ThresholdModel(r[fit], w[fit], tau, **kw)
            scores.append(np.mean(check_loss(r[ev] - model.quantiles(w[ev]), tau)))
        table[value] = float(np.mean(scores))
    best = min(table, key=table.get)
    return table, best


def write_score_table(path, table, name="h_w"):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([name, "S"])
        for k, v in table.items():
            wr.writerow([k, v])
