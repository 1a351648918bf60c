"""Piecewise-linear gauge functions and the closed-form parametric gauges
used as reference shapes."""

from __future__ import annotations

import functools
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from .simplex import LaplaceMesh, SimplexMesh, mesh_from_json


def _minor_dets(C):
    """Signed cofactor expansion of the (M, d-1, d) coplanar matrices."""
    M, dm1, d = C.shape
    out = np.empty((M, d))
    for j in range(d):
        minor = np.delete(C, j, axis=2)
        det = minor[:, 0, 0] if dm1 == 1 else np.linalg.det(minor)
        out[:, j] = (-1) ** j * det
    return out


@dataclass(frozen=True, eq=False)
class PwlGauge:
    """Piecewise-linear gauge: ``theta[k] = 1 / g(node_k)``.

    Between the nodes of each region the unit level set is the hyperplane
    through the scaled vertices ``theta_j * node_j``.
    """

    mesh: SimplexMesh | LaplaceMesh
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.mesh.n_nodes,):
            raise ValueError(f"theta needs {self.mesh.n_nodes} entries, got {theta.shape}")
        if np.any(~np.isfinite(theta)) or np.any(theta <= 0):
            raise ValueError("theta must be positive and finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self):
        return self.mesh.dim

    def with_theta(self, theta):
        return PwlGauge(self.mesh, theta)

    @cached_property
    def scaled_vertices(self):
        """(M, d, d): row j of block k is theta_j^(k) w*^(k),j."""
        reg = self.mesh.regions
        return self.theta[reg][:, :, None] * self.mesh.nodes[reg]

    @cached_property
    def coplanar(self):
        V = self.scaled_vertices
        return V[:, :1, :] - V[:, 1:, :]

    @cached_property
    def _normals(self):
        n = _minor_dets(self.coplanar)
        denom = np.einsum("kj,kj->k", n, self.scaled_vertices[:, 0, :])
        if np.any(np.abs(denom) < 1e-300):
            raise ZeroDivisionError("degenerate scaled vertices: zero normal denominator")
        return n, denom

    def coplanar_and_normal(self, k):
        """Normal vector of region k and its denominator n^T theta_1 w*_1."""
        n, denom = self._normals
        return n[k].copy(), float(denom[k])

    @cached_property
    def gradients(self):
        """(M, d) per-region gradient of g."""
        n, denom = self._normals
        return n / denom[:, None]

    def region_gradient(self, k):
        return self.gradients[k].copy()

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Gauge value at Cartesian points ``x`` (rows)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        r, w = self.mesh.decompose(x)
        k, _ = self.mesh.locate(w)
        u = self.mesh.direction(w)
        g = r * np.einsum("ij,ij->i", self.gradients[k], u)
        return float(g[0]) if single else g

    def eval_angles(self, w):
        """Gauge at angles (simplex vectors or Laplace scalars)."""
        return self.mesh.basis(w) @ (1.0 / self.theta)

    def region_dets(self):
        return np.linalg.det(self.scaled_vertices)

    def volume(self):
        """Volume of the set {g <= 1}: sum of |det| of scaled vertex matrices over d!."""
        dets = np.abs(self.region_dets())
        small = dets < 1e-14
        if small.any():
            warnings.warn(f"{int(small.sum())} degenerate region(s) contribute zero volume")
            dets = np.where(small, 0.0, dets)
        return float(dets.sum() / math.factorial(self.dim))

    def penalty(self):
        """Mean over nodes of the mean squared gradient jump across neighbouring regions.

        Nodes with no neighbouring-region pair (the end nodes when d=2) add zero.
        """
        pairs, weights = penalty_pairs(self.mesh)
        if len(pairs) == 0:
            return 0.0
        G = self.gradients
        diff = G[pairs[:, 0]] - G[pairs[:, 1]]
        # jumps at rounding level mean the two planes coincide
        scale = np.maximum(np.abs(G[pairs[:, 0]]), np.abs(G[pairs[:, 1]]))
        diff = np.where(np.abs(diff) <= 16 * np.finfo(float).eps * scale, 0.0, diff)
        return float(np.sum(weights * np.sum(diff * diff, axis=1)))

    def max_gradient_gap(self):
        G = self.gradients
        gaps = [np.linalg.norm(G[i] - G[j]) for pairs in self.mesh.neighbor_pairs for i, j in pairs]
        return max(gaps) if gaps else 0.0

    def unit_level_set(self, w):
        """Radii 1/g(w) of the boundary of {g <= 1} along angles ``w``."""
        return 1.0 / self.eval_angles(w)

    def to_json(self):
        return json.dumps({"mesh": json.loads(self.mesh.to_json()), "theta": self.theta.tolist()})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text) if isinstance(text, str) else text
        return cls(mesh_from_json(obj["mesh"]), np.asarray(obj["theta"], float))


@functools.lru_cache(maxsize=64)
def penalty_pairs(mesh):
    """Flattened neighbour pairs over all nodes with weights 1 / (N |I_l|)."""
    pairs, weights = [], []
    for node_pairs in mesh.neighbor_pairs:
        for p in node_pairs:
            pairs.append(p)
            weights.append(1.0 / (mesh.n_nodes * len(node_pairs)))
    return np.array(pairs, dtype=int).reshape(-1, 2), np.array(weights)


def gauge_from_function(mesh, g):
    """PWL gauge interpolating ``g`` at the mesh nodes."""
    return PwlGauge(mesh, 1.0 / np.asarray(g(mesh.nodes), dtype=float))


def gradient_penalty(theta, mesh):
    return PwlGauge(mesh, theta).penalty()


# --- parametric gauges -----------------------------------------------------

def set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


FAMILIES = ("logistic", "gaussian", "inverted_logistic", "asymmetric_logistic",
            "mixture", "gaussian_laplace")


@dataclass(frozen=True)
class ParametricGauge:
    """Closed-form gauge of a known copula in exponential (or Laplace) margins.

    params by family:
      logistic, inverted_logistic: ``alpha`` in (0, 1]
      gaussian, gaussian_laplace: ``rho`` (equicorrelation) or ``sigma`` (matrix)
      asymmetric_logistic: ``sets`` (list of index tuples, 0-based) and ``alphas``
      mixture: ``components`` (two ParametricGauge) and weight ``p``
    """

    family: str
    params: dict
    dim: int

    def __post_init__(self):
        f, p = self.family, self.params
        if f not in FAMILIES:
            raise ValueError(f"unknown family {f!r}")
        if f in ("logistic", "inverted_logistic"):
            if not 0 < p["alpha"] <= 1:
                raise ValueError("alpha must lie in (0, 1]")
        elif f in ("gaussian", "gaussian_laplace"):
            S = self.sigma
            if np.any(np.abs(S[~np.eye(self.dim, dtype=bool)]) >= 1):
                raise ValueError("correlations must lie in (-1, 1)")
            if np.linalg.eigvalsh(S).min() <= 0:
                raise ValueError("correlation matrix must be positive definite")
            if f == "gaussian_laplace" and self.dim != 2:
                raise ValueError("gaussian_laplace is bivariate")
        elif f == "asymmetric_logistic":
            sets = [tuple(s) for s in p["sets"]]
            if len(sets) != len(p["alphas"]) or any(not 0 < a <= 1 for a in p["alphas"]):
                raise ValueError("one alpha in (0, 1] per set")
            if set().union(*map(set, sets)) != set(range(self.dim)):
                raise ValueError("every variable must belong to some set")
            if self.dim > 5:
                raise ValueError("partition enumeration supports d <= 5")
        elif f == "mixture":
            if not 0 < p.get("p", 0.5) < 1:
                raise ValueError("mixture weight must lie in (0, 1)")
            if len(p["components"]) != 2:
                raise ValueError("mixture takes two components")

    @property
    def sigma(self):
        p = self.params
        if "sigma" in p:
            return np.asarray(p["sigma"], dtype=float)
        S = np.full((self.dim, self.dim), float(p["rho"]))
        np.fill_diagonal(S, 1.0)
        return S

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        f, p = self.family, self.params
        if f == "logistic":
            a = p["alpha"]
            g = x.sum(1) / a + (1 - self.dim / a) * x.min(1)
        elif f == "inverted_logistic":
            a = p["alpha"]
            g = np.sum(x ** (1 / a), axis=1) ** a
        elif f == "gaussian":
            s = np.sqrt(x)
            g = np.einsum("ij,jk,ik->i", s, np.linalg.inv(self.sigma), s)
        elif f == "gaussian_laplace":
            s = np.sign(x) * np.sqrt(np.abs(x))
            g = np.einsum("ij,jk,ik->i", s, np.linalg.inv(self.sigma), s)
        elif f == "asymmetric_logistic":
            g = self._alog(x)
        else:
            g = np.minimum(p["components"][0].eval(x), p["components"][1].eval(x))
        return float(g[0]) if single else g

    def _alog(self, x):
        sets = [frozenset(s) for s in self.params["sets"]]
        alphas = list(self.params["alphas"])
        best = np.full(x.shape[0], np.inf)
        block_cache = {}
        for part in set_partitions(range(self.dim)):
            total = np.zeros(x.shape[0])
            for block in part:
                key = frozenset(block)
                if key not in block_cache:
                    block_cache[key] = self._alog_block(x, key, sets, alphas)
                total = total + block_cache[key]
            best = np.minimum(best, total)
        return best

    @staticmethod
    def _alog_block(x, block, sets, alphas):
        out = np.full(x.shape[0], np.inf)
        cols = sorted(block)
        for C, a in zip(sets, alphas):
            if block <= C:
                term = x[:, cols].sum(1) / a + (1 - len(cols) / a) * x[:, sorted(C)].min(1)
                out = np.minimum(out, term)
        return out


def logistic(alpha, d=2):
    return ParametricGauge("logistic", {"alpha": alpha}, d)


def gaussian(rho, d=2):
    return ParametricGauge("gaussian", {"rho": rho}, d)


def project_gauge(g, d, drop, mesh_size=50):
    """Projection of a gauge onto the coordinates outside ``drop`` by minimising
    over a grid of the dropped coordinates in [0, 1]^|drop|, then polishing the
    best grid point with a bounded simplex search.

    Returns a function of (n, d-|drop|) points.
    """
    drop = sorted(drop)
    if d - len(drop) != 3:
        raise ValueError("projection must leave exactly three coordinates")
    if mesh_size < 2:
        raise ValueError("mesh_size must be at least 2")
    keep = [j for j in range(d) if j not in drop]
    grid = np.array(list(itertools.product(np.linspace(0, 1, mesh_size), repeat=len(drop))))

    def projected(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty(len(y))
        for i, row in enumerate(y):
            x = np.empty((len(grid), d))
            x[:, keep] = row
            x[:, drop] = grid
            vals = g(x)
            best = int(np.argmin(vals))

            def f(z, row=row):
                p = np.empty((1, d))
                p[0, keep] = row
                p[0, drop] = z
                return float(g(p)[0])

            res = minimize(f, grid[best], method="Nelder-Mead",
                           bounds=[(0.0, 1.0)] * len(drop),
                           options={"xatol": 1e-10, "fatol": 1e-12})
            out[i] = min(vals[best], res.fun)
        return out

    return projected
