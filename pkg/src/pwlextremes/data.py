"""Datasets: copula simulators, semiparametric margin transforms, CSV I/O."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_ndtr

from .gauge import ParametricGauge

log = logging.getLogger(__name__)

MARGINS = ("raw", "exponential", "laplace")


@dataclass(frozen=True)
class CopulaSpec:
    """A dependence model plus the margins the simulated data should have.

    family is one of logistic, inverted_logistic, gaussian, asymmetric_logistic,
    mixture; ``params`` as for :class:`ParametricGauge` (sets 0-based).
    """

    family: str
    params: dict
    dim: int = 2
    margins: str = "exponential"

    def __post_init__(self):
        if self.margins not in ("exponential", "laplace"):
            raise ValueError("margins must be exponential or laplace")
        if self.margins == "laplace" and self.family != "gaussian":
            raise ValueError("Laplace-margin simulation is implemented for the Gaussian copula")
        self.gauge()  # validates parameters

    def gauge(self):
        """True limit-set gauge in the requested margins."""
        p = dict(self.params)
        if self.family == "mixture":
            p["components"] = [c.gauge() for c in p["components"]]
        fam = "gaussian_laplace" if self.margins == "laplace" else self.family
        return ParametricGauge(fam, p, self.dim)

    def to_dict(self):
        p = dict(self.params)
        if self.family == "mixture":
            p["components"] = [c.to_dict() for c in p["components"]]
        return {"family": self.family, "params": p, "dim": self.dim, "margins": self.margins}

    @classmethod
    def from_dict(cls, obj):
        p = dict(obj["params"])
        if obj["family"] == "mixture":
            p["components"] = [cls.from_dict(c) for c in p["components"]]
        return cls(obj["family"], p, obj.get("dim", 2), obj.get("margins", "exponential"))


def _alog(sets, alpha, d):
    return CopulaSpec("asymmetric_logistic", {"sets": sets, "alphas": [alpha] * len(sets)}, d)


DISTRIBUTIONS = {
    "I": CopulaSpec("logistic", {"alpha": 0.4}, 2),
    "II": CopulaSpec("logistic", {"alpha": 0.8}, 2),
    "III": CopulaSpec("gaussian", {"rho": 0.8}, 2),
    "IV": CopulaSpec("inverted_logistic", {"alpha": 0.7}, 2),
    "V": _alog([(0, 1), (0, 2), (1, 2)], 0.4, 3),
    "VI": _alog([(0,), (0, 1), (1, 2)], 0.4, 3),
    "VII": CopulaSpec("mixture", {"components": [_alog([(0, 1), (0, 1, 2)], 0.4, 3),
                                                 CopulaSpec("gaussian", {"rho": 0.6}, 3)],
                                  "p": 0.5}, 3),
}
LAPLACE_GAUSSIAN = CopulaSpec("gaussian", {"rho": -0.5}, 2, margins="laplace")


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    margins: str = "exponential"
    names: tuple = ()
    transforms: tuple = field(default=(), repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] < x.shape[1]:
            raise ValueError("need an n x d matrix with n >= d")
        if self.margins not in MARGINS:
            raise ValueError(f"margins must be one of {MARGINS}")
        if self.margins == "exponential" and np.any(x < 0):
            raise ValueError("exponential margins must be nonnegative")
        object.__setattr__(self, "x", x)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"X{j + 1}" for j in range(x.shape[1])))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]


# --- simulation ------------------------------------------------------------

def positive_stable(alpha, size, rng):
    """Positive stable variates with Laplace transform exp(-t**alpha) (Kanter's method)."""
    if alpha == 1:
        return np.ones(size)
    u = rng.uniform(0, np.pi, size)
    e = rng.exponential(size=size)
    return (np.sin(alpha * u) / np.sin(u) ** (1 / alpha)) * \
        (np.sin((1 - alpha) * u) / e) ** ((1 - alpha) / alpha)


def logistic_frechet(alpha, n, d, rng):
    """Unit-Frechet logistic sample with exponent (sum z_j^(-1/alpha))^alpha."""
    s = positive_stable(alpha, n, rng)
    e = rng.exponential(size=(n, d))
    return (s[:, None] / e) ** alpha


def frechet_to_exp(z):
    return -np.log(-np.expm1(-1.0 / z))


def alog_weights(sets, d):
    """Per-variable weights 1/#{sets containing j}, making each margin unit Frechet."""
    counts = np.zeros(d)
    for s in sets:
        counts[list(s)] += 1
    return 1.0 / counts


def _simulate_exp(spec, n, rng):
    f, p, d = spec.family, spec.params, spec.dim
    if f == "logistic":
        return frechet_to_exp(logistic_frechet(p["alpha"], n, d, rng))
    if f == "inverted_logistic":
        return 1.0 / logistic_frechet(p["alpha"], n, d, rng)
    if f == "gaussian":
        z = rng.multivariate_normal(np.zeros(d), spec.gauge().sigma, size=n)
        return -log_ndtr(-z)
    if f == "asymmetric_logistic":
        wts = alog_weights(p["sets"], d)
        z = np.zeros((n, d))
        for s, a in zip(p["sets"], p["alphas"]):
            s = list(s)
            block = logistic_frechet(a if len(s) > 1 else 1.0, n, len(s), rng)
            z[:, s] = np.maximum(z[:, s], wts[s] * block)
        return frechet_to_exp(z)
    if f == "mixture":
        c1, c2 = p["components"]
        pick = rng.uniform(size=n) < p.get("p", 0.5)
        x = _simulate_exp(c2, n, rng)
        x[pick] = _simulate_exp(c1, int(pick.sum()), rng)
        return x
    raise ValueError(f"cannot simulate family {f!r}")


def simulate(spec, n, seed=None):
    """``n`` draws from ``spec`` in standard exponential (or Laplace) margins."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if spec.margins == "laplace":
        z = rng.multivariate_normal(np.zeros(spec.dim), spec.gauge().sigma, size=n)
        x = np.where(z < 0, np.log(2.0) + log_ndtr(z), -np.log(2.0) - log_ndtr(-z))
        return Dataset(x, "laplace")
    return Dataset(_simulate_exp(spec, n, rng), "exponential")


# --- exact rectangle probabilities ----------------------------------------

def _exp_to_frechet(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(np.isinf(x), np.inf, -1.0 / np.log(-np.expm1(-x)))


def _exponent(spec, z):
    """V(z) for Frechet-margin max-stable families; z may contain inf."""
    f, p = spec.family, spec.params
    with np.errstate(divide="ignore"):
        if f == "logistic":
            a = p["alpha"]
            return np.sum(z ** (-1 / a), axis=-1) ** a
        wts = alog_weights(p["sets"], spec.dim)
        total = 0.0
        for s, a in zip(p["sets"], p["alphas"]):
            s = list(s)
            a = a if len(s) > 1 else 1.0
            total = total + np.sum((wts[s] / z[..., s]) ** (1 / a), axis=-1) ** a
        return total


def box_probability(spec, lower, upper):
    """P(X in prod [lower_j, upper_j]) in exponential margins, by inclusion-exclusion
    over the joint CDF (or survival function for the inverted logistic).

    Exact for logistic, asymmetric logistic, inverted logistic and mixtures of these.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = spec.dim
    if spec.family == "mixture":
        c1, c2 = spec.params["components"]
        w = spec.params.get("p", 0.5)
        return w * box_probability(c1, lower, upper) + (1 - w) * box_probability(c2, lower, upper)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=d):
        corner = np.array(corner)
        if spec.family == "inverted_logistic":
            # survival at the corner; sign from the number of upper bounds used
            pt = np.where(corner == 1, upper, lower)
            sign = (-1) ** corner.sum()
            a = spec.params["alpha"]
            with np.errstate(invalid="ignore"):
                v = np.sum(pt ** (1 / a)) ** a
            term = 0.0 if np.isinf(v) else np.expm1(-v)
        elif spec.family in ("logistic", "asymmetric_logistic"):
            pt = np.where(corner == 1, upper, lower)
            sign = (-1) ** (d - corner.sum())
            term = np.expm1(-_exponent(spec, _exp_to_frechet(pt)))
        else:
            raise ValueError(f"no closed-form rectangle probability for {spec.family!r}")
        total += sign * term
    return float(total)


def mc_box_probability(spec, lower, upper, n=10_000_000, seed=0, chunk=1_000_000):
    """Direct-simulation estimate of a rectangle probability and its standard error."""
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x = simulate(spec, m, rng).x
        hits += int(np.sum(np.all((x >= lower) & (x <= upper), axis=1)))
        done += m
    p = hits / n
    return p, np.sqrt(p * (1 - p) / n)


# --- margin transforms -----------------------------------------------------

def gpd_fit(y, shape_bounds=(-0.9, 1.0)):
    """Profile maximum likelihood for a generalised Pareto fit to excesses ``y`` > 0.

    Returns (scale, shape).
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 30:
        raise ValueError("need at least 30 excesses for a GPD fit")

    def nll(log_sigma, xi):
        sigma = np.exp(log_sigma)
        if abs(xi) < 1e-8:
            return len(y) * log_sigma + y.sum() / sigma
        z = 1 + xi * y / sigma
        if np.any(z <= 0):
            return np.inf
        return len(y) * log_sigma + (1 + 1 / xi) * np.log(z).sum()

    s0 = np.log(y.mean())

    def profile(xi):
        res = minimize_scalar(lambda ls: nll(ls, xi), bracket=(s0 - 1, s0 + 1))
        return res.fun, res.x

    res = minimize_scalar(lambda xi: profile(xi)[0], bounds=shape_bounds, method="bounded",
                          options={"xatol": 1e-8})
    if not res.success:
        raise RuntimeError("GPD fit did not converge")
    xi = float(res.x)
    if xi <= -1:
        raise RuntimeError("GPD shape estimate <= -1")
    return float(np.exp(profile(xi)[1])), xi


@dataclass(frozen=True)
class MarginTransform:
    """Empirical CDF (rank/(n+1)) below ``u`` spliced with a GPD above it."""

    knots: tuple
    probs: tuple
    u: float
    p_u: float
    scale: float
    shape: float

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        knots = np.asarray(self.knots)
        below = np.interp(x, knots, self.probs, left=self.probs[0] * 0.5)
        y = np.maximum(x - self.u, 0.0)
        if abs(self.shape) < 1e-12:
            tail = np.exp(-y / self.scale)
        else:
            tail = np.maximum(1 + self.shape * y / self.scale, 0.0) ** (-1 / self.shape)
        above = self.p_u + (1 - self.p_u) * (1 - tail)
        return np.where(x <= self.u, below, above)

    def to_dict(self):
        return {"knots": list(self.knots), "probs": list(self.probs), "u": self.u,
                "p_u": self.p_u, "scale": self.scale, "shape": self.shape}


def fit_margin(x, q=0.95):
    x = np.asarray(x, dtype=float)
    n = len(x)
    u = float(np.quantile(x, q))
    ranks = np.searchsorted(np.sort(x), x, side="right")  # ties share the top rank
    xs = np.sort(x[x <= u])
    knots, idx = np.unique(xs, return_index=True)
    probs = np.searchsorted(xs, knots, side="right") / (n + 1)
    p_u = float(np.sum(x <= u) / (n + 1))
    scale, shape = gpd_fit(x[x > u] - u)
    return MarginTransform(tuple(knots), tuple(probs), u, p_u, scale, shape), ranks


def _uniform_margins(raw, q):
    raw = np.asarray(raw, dtype=float)
    n, d = raw.shape
    U = np.empty_like(raw)
    transforms = []
    for j in range(d):
        t, ranks = fit_margin(raw[:, j], q)
        below = raw[:, j] <= t.u
        U[:, j] = np.where(below, ranks / (n + 1), t.cdf(raw[:, j]))
        transforms.append(t)
    return U, tuple(transforms)


def to_exponential_margins(raw, q=0.95, names=()):
    """Semiparametric transform of each margin to standard exponential."""
    U, transforms = _uniform_margins(raw, q)
    return Dataset(-np.log1p(-U), "exponential", tuple(names), transforms)


def uniform_to_laplace(U):
    U = np.asarray(U, dtype=float)
    return np.where(U < 0.5, np.log(2 * U), -np.log(2 * (1 - U)))


def to_laplace_margins(raw, q=0.95, names=()):
    """Semiparametric transform of bivariate data to standard Laplace margins."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[1] != 2:
        raise ValueError("Laplace margins are supported for d = 2 only")
    U, transforms = _uniform_margins(raw, q)
    return Dataset(uniform_to_laplace(U), "laplace", tuple(names), transforms)


# --- CSV ------------------------------------------------------------------

def read_csv(path):
    """Header row of names, one observation per row; incomplete rows are dropped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names, body = rows[0], rows[1:]
    keep = []
    for row in body:
        try:
            vals = [float(v) for v in row]
        except ValueError:
            continue
        if len(vals) == len(names) and all(np.isfinite(vals)):
            keep.append(vals)
    dropped = len(body) - len(keep)
    if dropped:
        log.info("dropped %d incomplete row(s) of %d", dropped, len(body))
    return np.array(keep), tuple(names)


def write_csv(path, x, names):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        wr.writerows(np.asarray(x).tolist())


def write_transforms(path, transforms):
    with open(path, "w") as fh:
        json.dump([t.to_dict() for t in transforms], fh, indent=1)
