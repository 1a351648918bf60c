"""Simulation from fitted models and extremal probability estimation."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaincc, gammainccinv, gammaln

from .fitting import decompose
from .simplex import laplace_recompose

PROPOSALS = ("beta", "dirichlet", "uniform")
DIRICHLET_FLOOR = 1.01


def sample_truncated_gamma(shape, rate, lower, size=None, seed=None):
    """Gamma(shape, rate) draws conditioned to exceed ``lower``, by inversion.

    ``rate`` and ``lower`` broadcast; inversion works on the upper tail so
    very small survival probabilities keep their precision.
    """
    rng = np.random.default_rng(seed)
    rate = np.asarray(rate, dtype=float)
    lower = np.asarray(lower, dtype=float)
    if np.any(rate <= 0) or np.any(lower < 0):
        raise ValueError("need rate > 0 and lower >= 0")
    shape_out = np.broadcast_shapes(rate.shape, lower.shape) if size is None else size
    s0 = gammaincc(shape, rate * lower)
    if np.any(s0 <= 0):
        raise FloatingPointError("truncation point has zero survival probability")
    u = 1.0 - rng.uniform(size=shape_out)  # in (0, 1]
    r = gammainccinv(shape, u * s0) / rate
    # guard the boundary against rounding in the inversion
    return np.maximum(r, np.nextafter(lower, np.inf))


# --- Metropolis-Hastings ----------------------------------------------------------

def independence_chain(log_weight, rng, burn_in=0, thin=1):
    """Run an independence sampler over pre-drawn proposals.

    ``log_weight[i]`` is log target - log proposal at proposal i. Proposal 0
    starts the chain. Returns (state index per kept step, acceptance rate
    after burn-in).
    """
    n = len(log_weight)
    logu = np.log(rng.uniform(size=n))
    state = np.empty(n, dtype=int)
    cur = 0
    accepted = 0
    state[0] = 0
    for i in range(1, n):
        if logu[i] < log_weight[i] - log_weight[cur]:
            cur = i
            if i >= burn_in:
                accepted += 1
        state[i] = cur
    kept = state[burn_in::thin]
    rate = accepted / max(n - max(burn_in, 1), 1)
    return kept, rate


@dataclass
class AngularSampler:
    """Source of exceedance angles: resampling the data or MCMC from f_W.

    For ``kind="mcmc"`` the target density is proportional to g(w)^(-d) of
    ``gauge``. Proposals are beta (on w1, or on (w+2)/4 for Laplace angles),
    Dirichlet, or uniform; ``params`` holds the proposal parameters.
    """

    kind: str = "empirical"
    gauge: object = None
    proposal: str = "beta"
    params: tuple = ()
    angles: np.ndarray | None = field(default=None, repr=False)
    burn_in: int = 1000
    thin: int = 1
    seed: int | None = None
    acceptance: float = field(default=np.nan, init=False)

    def __post_init__(self):
        if self.kind not in ("empirical", "mcmc"):
            raise ValueError("kind must be 'empirical' or 'mcmc'")
        if self.kind == "empirical" and self.angles is None:
            raise ValueError("empirical sampling needs the exceedance angles")
        if self.kind == "mcmc":
            if self.gauge is None:
                raise ValueError("MCMC sampling needs a target gauge")
            if self.proposal not in PROPOSALS:
                raise ValueError(f"proposal must be one of {PROPOSALS}")
            if self.burn_in < 0 or self.thin < 1:
                raise ValueError("need burn_in >= 0 and thin >= 1")
            if not self.params:
                if self.proposal == "uniform":
                    self.params = (1.0,) * self._proposal_dim()
                elif self.angles is None:
                    raise ValueError("proposal parameters or exceedance angles are required")
                else:
                    self.params = fit_proposal(self._to_unit(self.angles), self.proposal)
            if np.any(np.asarray(self.params) <= 0):
                raise ValueError("proposal parameters must be positive")
        self._rng = np.random.default_rng(self.seed)
        self.last_index = None

    @property
    def laplace(self):
        return self.gauge is not None and self.gauge.mesh.laplace

    def _proposal_dim(self):
        return 2 if self.gauge.dim == 2 else self.gauge.dim

    def _to_unit(self, w):
        """Map angles to the proposal's space: (n,) in [0,1] for d=2, else (n,d)."""
        w = np.asarray(w, dtype=float)
        if self.laplace:
            return (w.ravel() + 2.0) / 4.0
        return w[:, 0] if w.shape[1] == 2 else w

    def _from_unit(self, u):
        if self.laplace:
            return 4.0 * u - 2.0
        if u.ndim == 1:
            return np.column_stack([u, 1 - u])
        return u

    def _propose(self, n):
        p = np.asarray(self.params, dtype=float)
        if self._proposal_dim() == 2 and self.proposal != "dirichlet":
            u = self._rng.beta(p[0], p[1], size=n)
            # keep proposals inside the open interval so log densities stay finite
            u = np.clip(u, 1e-300, 1 - 1e-16)
            return u, stats.beta.logpdf(u, p[0], p[1])
        if self._proposal_dim() == 2:
            u = self._rng.dirichlet(p, size=n)
            return u[:, 0], stats.beta.logpdf(u[:, 0], p[0], p[1])
        u = self._rng.dirichlet(p, size=n)
        u = np.clip(u, 1e-300, None)
        u /= u.sum(axis=1, keepdims=True)
        return u, _dirichlet_logpdf(u, p)

    def log_target(self, w):
        return -self.gauge.dim * np.log(self.gauge.eval_angles(w))

    def sample(self, count):
        """``count`` angles; for MCMC also records the post-burn-in acceptance rate."""
        if self.kind == "empirical":
            idx = self._rng.integers(0, len(self.angles), size=count)
            self.last_index = idx
            return np.asarray(self.angles)[idx]
        total = self.burn_in + count * self.thin
        u, logq = self._propose(total)
        w = self._from_unit(u)
        kept, rate = independence_chain(self.log_target(w) - logq, self._rng, self.burn_in, self.thin)
        self.acceptance = rate
        if rate < 0.01:
            warnings.warn(f"MCMC acceptance rate {rate:.4f} is below 1%")
        return w[kept[:count]]


def _dirichlet_logpdf(x, alpha):
    return gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1) * np.log(x), axis=1)


def fit_proposal(u, proposal):
    """Method-of-moments beta or Dirichlet parameters for unit-scale angles ``u``."""
    u = np.asarray(u, dtype=float)
    if proposal == "uniform":
        return (1.0,) * (2 if u.ndim == 1 else u.shape[1])
    if u.ndim == 1:
        u = np.column_stack([u, 1 - u])
    m = u.mean(axis=0)
    v = u.var(axis=0, ddof=1)
    if np.any(v <= 0) or np.any(m <= 0):
        raise ValueError("proposal fit needs angles with positive spread in every coordinate")
    # pooled precision estimate across coordinates
    a0 = np.mean(m * (1 - m) / v) - 1
    if a0 <= 0:
        raise ValueError("method of moments gives a nonpositive precision")
    alpha = m * a0
    if proposal == "dirichlet" or u.shape[1] > 2:
        alpha = np.maximum(alpha, DIRICHLET_FLOOR)
    return tuple(float(a) for a in alpha)


def default_sampler(model, kind=None, proposal=None, seed=None, **kw):
    """Sampler implied by a fitted model: empirical angles unless an angular model exists."""
    target = model.density_gauge
    if kind is None:
        kind = "mcmc" if target is not None else "empirical"
    if kind == "empirical":
        return AngularSampler("empirical", angles=model.exceedances.w, seed=seed, **kw)
    if target is None:
        raise ValueError("model has no angular density to sample from")
    if proposal is None:
        proposal = "beta" if target.dim == 2 else "dirichlet"
    return AngularSampler("mcmc", target, proposal, angles=model.exceedances.w, seed=seed, **kw)


# --- exceedances and probabilities -------------------------------------------------

def sample_exceedances(model, sampler, n_star=50_000, seed=None, threshold_fn=None):
    """Points r* w* with w* from ``sampler`` and r* | w* truncated gamma above r_tau(w*).

    Returns (x, r, w). Thresholds for empirical angles are the stored ones;
    otherwise ``threshold_fn`` (default: the model threshold's interpolator).
    """
    if model.radial_gauge is None:
        raise ValueError("model has no radial gauge")
    w = sampler.sample(n_star)
    if sampler.kind == "empirical" and sampler.angles is model.exceedances.w:
        r_tau = model.exceedances.r_tau[sampler.last_index]
    else:
        if threshold_fn is None:
            if model.threshold is None:
                raise ValueError("need a threshold to sample new angles")
            threshold_fn = model.threshold.interpolator()
        r_tau = threshold_fn(w)
    g = model.radial_gauge.eval_angles(w)
    r = sample_truncated_gamma(model.mesh.dim, g, r_tau, seed=seed)
    x = laplace_recompose(r, w.ravel()) if model.laplace else r[:, None] * w
    return x, r, w


@dataclass(frozen=True)
class ExtremalRegion:
    """Axis-aligned box prod [lower_j, upper_j]; upper bounds may be infinite."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if np.any(lo >= hi):
            raise ValueError("need lower < upper in every coordinate")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def check_points(self, n_grid=1000, seed=0):
        """Corners plus random points on the faces x_j = lower_j."""
        lo = np.asarray(self.lower)
        hi = np.where(np.isinf(self.upper), lo + 10.0, self.upper)
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        rng = np.random.default_rng(seed)
        face = rng.uniform(lo, hi, size=(n_grid, self.dim))
        face[np.arange(n_grid), np.arange(n_grid) % self.dim] = lo[np.arange(n_grid) % self.dim]
        return np.vstack([corners, face])

    def check(self, threshold_fn, laplace=False):
        """True if every check point lies strictly beyond the threshold surface."""
        p = self.check_points()
        p = p[np.abs(p).sum(axis=1) > 0]
        r, w = decompose(p, laplace)
        return bool(np.all(r > threshold_fn(w)))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": [u if np.isfinite(u) else "inf" for u in self.upper]}


@dataclass(frozen=True)
class ProbabilityEstimate:
    region: ExtremalRegion
    estimate: float
    se: float
    hits: int
    n_star: int
    exceed_fraction: float
    tau: float | None = None

    def to_dict(self):
        return {"region": self.region.to_dict(), "estimate": self.estimate, "se": self.se,
                "hits": self.hits, "n_star": self.n_star, "tau": self.tau,
                "exceed_fraction": self.exceed_fraction}


def probability_from_sample(x, regions, exceed_fraction, tau=None):
    """Estimator mean 1_B(x*) times the observed exceedance fraction, per region.

    The standard error is binomial in the first factor; with zero hits the
    estimate is 0 and ``se`` is the one-sided 95% bound 3/n* (times the fraction).
    """
    n_star = len(x)
    out = []
    for reg in regions:
        hits = int(reg.contains(x).sum())
        p = hits / n_star
        se = np.sqrt(p * (1 - p) / n_star) if hits else 3.0 / n_star
        out.append(ProbabilityEstimate(reg, p * exceed_fraction, se * exceed_fraction, hits,
                                       n_star, exceed_fraction, tau))
    return out


def estimate_probability(model, sampler, regions, n_star=50_000, seed=None, threshold_fn=None,
                         check=True):
    """Probability estimates for one or more regions from a single simulated sample."""
    single = isinstance(regions, ExtremalRegion)
    regions = [regions] if single else list(regions)
    if check:
        fn = threshold_fn
        if fn is None and model.threshold is not None:
            fn = model.threshold.quantiles
        if fn is not None:
            for reg in regions:
                if not reg.check(fn, model.laplace):
                    raise ValueError(f"region {reg} is not entirely above the threshold")
    x, _, _ = sample_exceedances(model, sampler, n_star, seed, threshold_fn)
    tau = None if model.threshold is None else model.threshold.tau
    est = probability_from_sample(x, regions, model.exceedances.fraction, tau)
    return est[0] if single else est
