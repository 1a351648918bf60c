"""Penalised likelihood fitting of piecewise-linear gauges."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import gammaln

from .gauge import PwlGauge
from .simplex import laplace_decompose, mesh_from_json, to_angle

log = logging.getLogger(__name__)

MODES = ("radial", "angular", "joint")
DEFAULT_LAMBDA = {"radial": 1.0, "joint": 1.0, "angular": 20.0}
BOUND_TOL = 1e-6

SS_LABELS = {
    "SS1": ("radial", False, "empirical"),
    "SS2": ("radial", True, "empirical"),
    "SS3": ("radial", False, "model"),
    "SS4": ("radial", True, "model"),
    "SS5": ("joint", False, "model"),
    "SS6": ("joint", True, "model"),
}


@dataclass(frozen=True)
class FitConfig:
    """Likelihood choice, bounding, penalty and optimiser budget.

    ``angles`` says how exceedance angles are modelled alongside a radial fit:
    resampled ("empirical") or from a separately fitted angular gauge ("model").
    """

    mode: str = "radial"
    bounded: bool = False
    lam: float | None = None
    angles: str = "empirical"
    angular_lam: float = DEFAULT_LAMBDA["angular"]
    maxfev: int = 40000
    restarts: int = 10
    xatol: float = 1e-5
    fatol: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "angular" and self.bounded:
            raise ValueError("the angular model cannot be bounded")
        if self.angles not in ("empirical", "model"):
            raise ValueError("angles must be 'empirical' or 'model'")
        if self.mode == "joint" and self.angles != "model":
            object.__setattr__(self, "angles", "model")
        if self.lam is None:
            object.__setattr__(self, "lam", DEFAULT_LAMBDA[self.mode])
        if self.lam < 0 or self.angular_lam < 0:
            raise ValueError("penalty strength must be nonnegative")

    @property
    def ss_label(self):
        for label, spec in SS_LABELS.items():
            if spec == (self.mode, self.bounded, self.angles):
                return label
        return None

    @classmethod
    def from_label(cls, label, **kw):
        mode, bounded, angles = SS_LABELS[label]
        return cls(mode=mode, bounded=bounded, angles=angles, **kw)


@dataclass(frozen=True, eq=False)
class ExceedanceSample:
    """Radii and angles strictly above the threshold, with the threshold values."""

    r: np.ndarray
    w: np.ndarray
    r_tau: np.ndarray
    n_total: int

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        r_tau = np.asarray(self.r_tau, dtype=float)
        if len(r) == 0:
            raise ValueError("no exceedances")
        if r.shape != r_tau.shape or np.any(r <= r_tau):
            raise ValueError("every radius must strictly exceed its threshold")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "r_tau", r_tau)
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))

    def __len__(self):
        return len(self.r)

    @property
    def fraction(self):
        return len(self.r) / self.n_total

    def subset(self, idx):
        return ExceedanceSample(self.r[idx], self.w[idx], self.r_tau[idx], self.n_total)

    @classmethod
    def from_data(cls, x, threshold, laplace=False):
        """Exceedances of the points ``x`` over a fitted ThresholdModel."""
        r, w = decompose(x, laplace)
        r_tau = threshold.quantiles(w)
        keep = r > r_tau
        return cls(r[keep], w[keep], r_tau[keep], len(r))


def decompose(x, laplace=False):
    """Radius and angle; Laplace angles are scalars in [-2, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return laplace_decompose(x) if laplace else to_angle(x)


# --- likelihood pieces -----------------------------------------------------

def _log_gamma_sf(x, d, g):
    """log P(Gamma(d, rate g) > x) for integer shape d (Erlang tail sum)."""
    y = g * x
    total = np.ones_like(y)
    term = np.ones_like(y)
    for k in range(1, d):
        term = term * y / k
        total = total + term
    return -y + np.log(total)


def radial_terms(g, r, r_tau, d):
    """Per-point log truncated-gamma density with shape d and rate g."""
    logpdf = d * np.log(g) + (d - 1) * np.log(r) - g * r - gammaln(d)
    return logpdf - _log_gamma_sf(r_tau, d, g)


def _check(value):
    if not np.isfinite(value):
        raise FloatingPointError("non-finite negative log-likelihood")
    return float(value)


def nll_radial(theta, exceedances, mesh):
    g = PwlGauge(mesh, theta).eval_angles(exceedances.w)
    return _check(-np.sum(radial_terms(g, exceedances.r, exceedances.r_tau, mesh.dim)))


def nll_angular(theta, exceedances, mesh):
    """Angular negative log-likelihood, including the log d normalising constant."""
    gauge = PwlGauge(mesh, theta)
    g = gauge.eval_angles(exceedances.w)
    d = mesh.dim
    return _check(np.sum(d * np.log(g)) + len(g) * np.log(d * gauge.volume()))


def nll_joint(theta, exceedances, mesh):
    return nll_radial(theta, exceedances, mesh) + nll_angular(theta, exceedances, mesh)


NLL = {"radial": nll_radial, "angular": nll_angular, "joint": nll_joint}


def gradient_penalty(theta, mesh):
    return PwlGauge(mesh, theta).penalty()


class Objective:
    """Penalised NLL in log theta over the free parameters; fixed ones held."""

    def __init__(self, mesh, exceedances, mode, lam, theta_fixed, free):
        self.mesh = mesh
        self.mode = mode
        self.lam = lam
        self.theta_fixed = np.array(theta_fixed, dtype=float)
        self.free = np.asarray(free, dtype=bool)
        self.B = mesh.basis(exceedances.w)
        self.r = exceedances.r
        self.r_tau = exceedances.r_tau
        self.d = mesh.dim

    def theta(self, z):
        th = self.theta_fixed.copy()
        th[self.free] = np.exp(z)
        return th

    def nll(self, theta):
        g = self.B @ (1.0 / theta)
        total = 0.0
        if self.mode in ("radial", "joint"):
            total -= np.sum(radial_terms(g, self.r, self.r_tau, self.d))
        if self.mode in ("angular", "joint"):
            vol = PwlGauge(self.mesh, theta).volume()
            total += np.sum(self.d * np.log(g)) + len(g) * np.log(self.d * vol)
        return total

    def value(self, theta):
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            try:
                f = self.nll(theta)
                if self.lam > 0:
                    f += self.lam * PwlGauge(self.mesh, theta).penalty()
            except (ValueError, ZeroDivisionError, np.linalg.LinAlgError):
                return np.inf
        return f if np.isfinite(f) else np.inf

    def __call__(self, z):
        return self.value(self.theta(z))


def minimise(obj, z0, config):
    """Nelder-Mead with restarts until a restart no longer improves the objective."""
    z = np.asarray(z0, dtype=float)
    f = obj(z)
    if z.size == 0:
        return z, f, True
    converged = False
    nfev = 0
    for _ in range(config.restarts):
        res = minimize(obj, z, method="Nelder-Mead",
                       options={"maxfev": config.maxfev, "xatol": config.xatol,
                                "fatol": config.fatol, "adaptive": True})
        nfev += res.nfev
        improved = f - res.fun
        if res.fun <= f:
            z, f = res.x, res.fun
        if res.success and improved <= 10 * config.fatol:
            converged = True
            break
    log.debug("Nelder-Mead: %d evaluations, objective %.6f", nfev, f)
    return z, f, converged


def initial_theta(mesh, threshold, exceedances, mode):
    """Data-driven start from g(w) roughly proportional to 1/r_tau(w).

    The scale is profiled on the radial likelihood; angular starts have theta_1 = 1.
    """
    rt = threshold.quantiles(mesh.angles)
    if mode == "angular":
        return rt / rt[0]
    cap = 1.0 / mesh.box_nodes.max(axis=1)
    B = mesh.basis(exceedances.w)
    d = mesh.dim

    def nll(log_c):
        th = np.minimum(np.exp(log_c) * rt, cap)
        with np.errstate(all="ignore"):
            v = -np.sum(radial_terms(B @ (1 / th), exceedances.r, exceedances.r_tau, d))
        return v if np.isfinite(v) else np.inf

    c0 = -np.log(np.median(rt))
    res = minimize_scalar(nll, bracket=(c0 - 1, c0 + 1))
    return np.minimum(np.exp(res.x) * rt, cap)


@dataclass(eq=False)
class FittedModel:
    radial_gauge: PwlGauge | None
    angular_gauge: PwlGauge | None
    config: FitConfig
    exceedances: ExceedanceSample = field(repr=False)
    threshold: object = field(default=None, repr=False)
    objective: float = np.nan
    converged: bool = True
    frozen: tuple = ()
    bound_iterations: int = 0
    freeze_sizes: tuple = ()

    def __post_init__(self):
        if self.radial_gauge is None and self.angular_gauge is None:
            raise ValueError("a fitted model needs at least one gauge")

    @property
    def mesh(self):
        return (self.radial_gauge or self.angular_gauge).mesh

    @property
    def laplace(self):
        return self.mesh.laplace

    @property
    def density_gauge(self):
        """Gauge defining the angular density: separate angular fit, else the joint one."""
        if self.angular_gauge is not None:
            return self.angular_gauge
        return self.radial_gauge if self.config.mode == "joint" else None

    def to_dict(self):
        th = self.threshold
        return {
            "mesh": json.loads(self.mesh.to_json()),
            "radial_theta": None if self.radial_gauge is None else self.radial_gauge.theta.tolist(),
            "angular_theta": None if self.angular_gauge is None else self.angular_gauge.theta.tolist(),
            "config": asdict(self.config),
            "ss_label": self.config.ss_label,
            "threshold": None if th is None else {"tau": th.tau, "h_r": th.h_r, "h_w": th.h_w,
                                                  "kernel": th.kernel},
            "objective": self.objective,
            "converged": self.converged,
            "frozen": list(self.frozen),
            "bound_iterations": self.bound_iterations,
            "freeze_sizes": list(self.freeze_sizes),
            "n_exceedances": len(self.exceedances),
            "n_total": self.exceedances.n_total,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj, exceedances, threshold=None):
        mesh = mesh_from_json(obj["mesh"])
        rg = None if obj["radial_theta"] is None else PwlGauge(mesh, obj["radial_theta"])
        ag = None if obj["angular_theta"] is None else PwlGauge(mesh, obj["angular_theta"])
        return cls(rg, ag, FitConfig(**obj["config"]), exceedances, threshold,
                   obj["objective"], obj["converged"], tuple(obj["frozen"]),
                   obj.get("bound_iterations", 0), tuple(obj.get("freeze_sizes", ())))


def fit_gauge(mesh, exceedances, mode, lam, config, theta0, free=None):
    """Minimise the penalised NLL from ``theta0``; entries outside ``free`` stay fixed."""
    theta0 = np.asarray(theta0, dtype=float)
    if free is None:
        free = np.ones(mesh.n_nodes, dtype=bool)
        if mode == "angular":
            theta0 = theta0 / theta0[0]
            free[0] = False
    obj = Objective(mesh, exceedances, mode, lam, theta0, free)
    f0 = obj(np.log(theta0[free]))
    if not np.isfinite(f0):
        raise FloatingPointError("objective is not finite at the initial parameters")
    z, f, ok = minimise(obj, np.log(theta0[free]), config)
    if not ok:
        warnings.warn("Nelder-Mead did not converge within the evaluation budget")
    return obj.theta(z), f, ok


def fit(config, exceedances, mesh, threshold=None, init=None, angular_init=None):
    """Fit the gauge(s) implied by ``config``; returns a FittedModel.

    ``init`` (radial/joint start) and ``angular_init`` default to the
    threshold-based heuristic and need ``threshold`` in that case.
    """
    if len(exceedances) == 0:
        raise ValueError("no exceedances to fit")
    if (init is None or (config.angles == "model" and config.mode == "radial" and angular_init is None)) \
            and threshold is None:
        raise ValueError("a threshold model is needed for the default initial values")
    radial = angular = None
    objective = 0.0
    converged = True
    if config.mode in ("radial", "joint"):
        th0 = initial_theta(mesh, threshold, exceedances, config.mode) if init is None else init
        theta, f, ok = fit_gauge(mesh, exceedances, config.mode, config.lam, config, th0)
        radial, objective, converged = PwlGauge(mesh, theta), f, ok
    if config.mode == "angular" or (config.mode == "radial" and config.angles == "model"):
        lam = config.lam if config.mode == "angular" else config.angular_lam
        if config.mode == "angular" and init is not None:
            angular_init = init
        th0 = initial_theta(mesh, threshold, exceedances, "angular") if angular_init is None else angular_init
        theta, f, ok = fit_gauge(mesh, exceedances, "angular", lam, config, th0)
        angular = PwlGauge(mesh, theta)
        objective += f
        converged &= ok
    model = FittedModel(radial, angular, config, exceedances, threshold, objective, converged)
    if config.bounded:
        model = bound(model)
    return model


# --- bounding ----------------------------------------------------------------

def box_extent(gauge):
    """(N, C) coordinates of the scaled vertices theta_k w*k in box coordinates."""
    return gauge.theta[:, None] * gauge.mesh.box_nodes


def is_bounded(gauge, tol=BOUND_TOL):
    c = box_extent(gauge).max(axis=0)
    return bool(np.all(np.abs(c - 1) <= tol))


def bound_theta(mesh, exceedances, mode, lam, config, theta, frozen=(), max_iter=None,
                history=None):
    """Iterative rescale-and-refit until the limit set just touches the unit box.

    Each pass freezes the nodes attaining a coordinate maximum that is off the
    box: the node sticking out furthest (if the maximum exceeds 1) or the
    best-placed node dominated by that coordinate (if the set falls short).
    Frozen nodes are moved onto the box boundary, theta_k = 1 / max_j w*k_j,
    and the remaining parameters are refitted from their current values.
    Returns (theta, objective, frozen tuple, iterations, converged); the size
    of the freeze set after each pass is appended to ``history`` if given.
    """
    box = mesh.box_nodes
    cap = 1.0 / box.max(axis=1)
    theta = np.array(theta, dtype=float)
    F = np.zeros(mesh.n_nodes, dtype=bool)
    F[list(frozen)] = True
    theta[F] = cap[F]
    f = Objective(mesh, exceedances, mode, lam, theta, ~F).value(theta)
    converged = True
    it = 0
    while True:
        P = theta[:, None] * box
        c = P.max(axis=0)
        if np.all(np.abs(c - 1) <= BOUND_TOL):
            break
        new = np.zeros_like(F)
        for j in range(box.shape[1]):
            if c[j] > 1 + BOUND_TOL:
                new |= P[:, j] >= c[j] - 1e-12
            elif c[j] < 1 - BOUND_TOL:
                cand = ~F & (box[:, j] > 0) & (box[:, j] >= box.max(axis=1) - 1e-12)
                if not cand.any():
                    raise RuntimeError(f"no free node can bring coordinate {j} to the box")
                best = np.where(cand, P[:, j], -np.inf)
                new |= best >= best.max() - 1e-12
        new &= ~F
        if not new.any():
            raise RuntimeError("bounding stalled: the freeze set did not grow")
        F |= new
        theta[new] = cap[new]
        it += 1
        if history is not None:
            history.append(int(F.sum()))
        if F.all():
            f = Objective(mesh, exceedances, mode, lam, theta, ~F).value(theta)
            if not np.all(np.abs((theta[:, None] * box).max(axis=0) - 1) <= BOUND_TOL):
                raise RuntimeError("bounding failed: every node frozen without reaching the box")
            break
        theta, f, ok = fit_gauge(mesh, exceedances, mode, lam, config, theta, free=~F)
        converged &= ok
        if max_iter is not None and it >= max_iter:
            break
    return theta, f, tuple(np.flatnonzero(F).tolist()), it, converged


def bound(model):
    """Apply the bounding iteration to a radial or joint fit."""
    if model.config.mode == "angular" or model.radial_gauge is None:
        raise ValueError("bounding applies to radial and joint fits only")
    g = model.radial_gauge
    if is_bounded(g):
        return model
    cfg = model.config
    sizes = []
    theta, f, frozen, it, ok = bound_theta(g.mesh, model.exceedances, cfg.mode, cfg.lam, cfg,
                                           g.theta, history=sizes)
    objective = f
    if model.angular_gauge is not None:
        objective += Objective(g.mesh, model.exceedances, "angular", cfg.angular_lam,
                               model.angular_gauge.theta, np.ones(g.mesh.n_nodes, bool)) \
            .value(model.angular_gauge.theta)
    return FittedModel(PwlGauge(g.mesh, theta), model.angular_gauge, cfg, model.exceedances,
                       model.threshold, objective, model.converged and ok, frozen, it, tuple(sizes))


# --- penalty selection ---------------------------------------------------------

def select_lambda(config, exceedances, mesh, threshold=None, folds=4,
                  grid=(0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0), seed=0, init=None):
    """K-fold cross-validated held-out NLL for each penalty strength.

    Returns (best lambda, {lambda: [fold scores]}); a failed fold is recorded
    as nan and excludes its lambda from selection.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if not grid:
        raise ValueError("empty lambda grid")
    n = len(exceedances)
    perm = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(perm, folds)
    mode = config.mode
    if init is None:
        init = initial_theta(mesh, threshold, exceedances, mode)
    table = {}
    for lam in grid:
        scores = []
        for k in range(folds):
            train = exceedances.subset(np.concatenate([chunks[i] for i in range(folds) if i != k]))
            test = exceedances.subset(chunks[k])
            try:
                theta, _, _ = fit_gauge(mesh, train, mode, lam, config, init)
                if config.bounded:
                    theta = bound_theta(mesh, train, mode, lam, config, theta)[0]
                scores.append(NLL[mode](theta, test, mesh))
            except (FloatingPointError, RuntimeError, ValueError) as err:
                log.warning("lambda=%g fold %d failed: %s", lam, k, err)
                scores.append(np.nan)
        table[lam] = scores
    valid = {lam: np.mean(s) for lam, s in table.items() if np.all(np.isfinite(s))}
    if not valid:
        raise RuntimeError("every lambda had a failed fold")
    return min(valid, key=valid.get), table
