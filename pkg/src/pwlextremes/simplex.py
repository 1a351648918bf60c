"""Reference-angle meshes on the L1 unit simplex.

Angles are stored as full d-vectors that are nonnegative and sum to one.
Meshes are triangulated on the (d-1)-dimensional projection obtained by
dropping the last coordinate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

BARY_TOL = 1e-10
_DEGENERATE_VOL = 1e-14


def to_angle(x):
    """L1-normalise nonnegative vectors (last axis). Returns (r, w)."""
    x = np.asarray(x, dtype=float)
    r = np.abs(x).sum(axis=-1)
    if np.any(r <= 0):
        raise ValueError("zero vector has no angle")
    return r, x / r[..., None]


def check_angles(w, tol=1e-12):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if np.any(w < -tol) or np.any(np.abs(w.sum(axis=1) - 1.0) > tol):
        raise ValueError("angles must be nonnegative and sum to one")
    return w


@dataclass(frozen=True, eq=False)
class SimplexMesh:
    """Reference angles plus a triangulation of the simplex.

    ``nodes`` is (N, d); ``regions`` is (M, d) integer vertex indices.
    """

    nodes: np.ndarray
    regions: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        regions = np.array(self.regions, dtype=int)
        if nodes.ndim != 2 or regions.ndim != 2 or regions.shape[1] != nodes.shape[1]:
            raise ValueError("regions must hold d vertex indices each")
        nodes.setflags(write=False)
        regions.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "dim", nodes.shape[1])

    laplace = False

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_regions(self):
        return self.regions.shape[0]

    @property
    def angles(self):
        """Node angles in the form accepted by ``locate`` and ``basis``."""
        return self.nodes

    @property
    def box_nodes(self):
        """Nonnegative node coordinates whose maxima define the unit-box contact."""
        return self.nodes

    @cached_property
    def vertex_inverse(self):
        """Per-region inverse of the d x d matrix whose columns are the region's nodes."""
        mats = np.transpose(self.nodes[self.regions], (0, 2, 1))
        return np.linalg.inv(mats)

    @cached_property
    def neighbor_pairs(self):
        """Region-index pairs sharing d-1 vertices, per node (the sets I_l)."""
        d = self.dim
        vsets = [frozenset(r) for r in self.regions.tolist()]
        pairs = [[] for _ in range(self.n_nodes)]
        for i, j in itertools.combinations(range(self.n_regions), 2):
            shared = vsets[i] & vsets[j]
            if len(shared) == d - 1:
                for node in shared:
                    pairs[node].append((i, j))
        return [tuple(p) for p in pairs]

    def barycentric(self, w):
        """Barycentric coordinates of angles ``w`` (n, d) in every region: (n, M, d)."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return np.einsum("kij,nj->nki", self.vertex_inverse, w)

    def locate(self, w, chunk=20000):
        """Region index and barycentric coordinates for each angle.

        Ties on shared faces go to the lowest region index.
        """
        w = np.atleast_2d(np.asarray(w, dtype=float))
        n = w.shape[0]
        idx = np.empty(n, dtype=int)
        bary = np.empty((n, self.dim))
        for s in range(0, n, chunk):
            b = self.barycentric(w[s:s + chunk])
            inside = b.min(axis=2) >= -BARY_TOL
            found = inside.any(axis=1)
            if not found.all():
                bad = w[s:s + chunk][~found][0]
                raise ValueError(f"angle {bad} lies outside every region")
            k = inside.argmax(axis=1)
            idx[s:s + chunk] = k
            bary[s:s + chunk] = b[np.arange(len(k)), k]
        return idx, bary

    def basis(self, w):
        """Sparse-free interpolation matrix B with B[i, node] = barycentric weight.

        For any nodal values v, ``B @ v`` linearly interpolates v within regions.
        """
        k, b = self.locate(w)
        B = np.zeros((len(k), self.n_nodes))
        rows = np.repeat(np.arange(len(k)), self.dim)
        np.add.at(B, (rows, self.regions[k].ravel()), b.ravel())
        return B

    @staticmethod
    def decompose(x):
        """Radii and angles of nonnegative vectors."""
        return to_angle(np.atleast_2d(x))

    @staticmethod
    def direction(w):
        return np.atleast_2d(np.asarray(w, dtype=float))

    def region_volumes(self):
        """(d-1)-volumes of the projected regions."""
        p = self.nodes[:, :-1][self.regions]
        if self.dim == 2:
            return np.abs(p[:, 1, 0] - p[:, 0, 0])
        diffs = p[:, 1:] - p[:, :1]
        return np.abs(np.linalg.det(diffs)) / _fact(self.dim - 1)

    def to_json(self):
        return json.dumps({"dim": self.dim, "nodes": self.nodes.tolist(),
                           "regions": self.regions.tolist()})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text) if isinstance(text, str) else text
        mesh = cls(np.asarray(obj["nodes"], float), np.asarray(obj["regions"], int))
        if mesh.dim != obj["dim"]:
            raise ValueError("dim does not match node width")
        return mesh


def _fact(k):
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


def delaunay_triangulate(nodes):
    """Delaunay triangulation of simplex nodes, computed on the projection
    that drops the last coordinate. Zero-volume simplices are discarded."""
    nodes = check_angles(nodes, tol=1e-9)
    n, d = nodes.shape
    if d < 2:
        raise ValueError("need d >= 2")
    if n < d:
        raise ValueError("need at least d nodes")
    if d == 2:
        order = np.argsort(nodes[:, 0], kind="stable")
        if np.any(np.diff(nodes[order, 0]) <= 0):
            raise ValueError("duplicate nodes")
        regions = np.column_stack([order[:-1], order[1:]])
        return SimplexMesh(nodes, _canonical(regions))
    proj = nodes[:, :-1]
    if np.linalg.matrix_rank(proj[1:] - proj[0], tol=1e-12) < d - 1:
        raise ValueError("degenerate node set: nodes do not span the simplex")
    tri = Delaunay(proj)
    simp = tri.simplices
    vols = np.abs(np.linalg.det(proj[simp[:, 1:]] - proj[simp[:, :1]]))
    return SimplexMesh(nodes, _canonical(simp[vols > _DEGENERATE_VOL]))


def _canonical(regions):
    regions = np.sort(np.asarray(regions, dtype=int), axis=1)
    order = np.lexsort(regions.T[::-1])
    return regions[order]


def make_regular_mesh(d, resolution):
    """Equally spaced reference angles.

    For d=2, ``resolution`` is the number of nodes N (odd, so that 1/2 is a node).
    For d=3, ``resolution`` is the number of divisions m; nodes are the points of
    {0, 1/m, ..., 1}^2 lying in the simplex.
    """
    if d == 2:
        if resolution < 3:
            raise ValueError("d=2 mesh needs at least one interior node")
        if resolution % 2 == 0:
            raise ValueError("d=2 mesh must contain the midpoint 1/2; use an odd node count")
        w = np.linspace(0.0, 1.0, resolution)
        return delaunay_triangulate(np.column_stack([w, 1.0 - w]))
    if d == 3:
        m = resolution
        if m < 3:
            raise ValueError("resolution gives no interior node")
        pts = [(i / m, j / m, (m - i - j) / m) for i in range(m + 1) for j in range(m + 1 - i)]
        return delaunay_triangulate(np.array(pts))
    raise ValueError("regular meshes are available for d in {2, 3}; use make_sparse_mesh")


def subface_centers(d):
    """Unit vectors, the global centre, and centres of every subface of S_{d-1}."""
    out = []
    for k in range(1, d + 1):
        for S in itertools.combinations(range(d), k):
            v = np.zeros(d)
            v[list(S)] = 1.0 / k
            out.append(v)
    return np.array(out)


def make_sparse_mesh(d, refine=False):
    """Sparse mesh for d >= 4: vertices, centre and subface centres; ``refine``
    adds the centroid of each region of the initial triangulation."""
    if d < 4:
        raise ValueError("sparse meshes are for d >= 4")
    mesh = delaunay_triangulate(subface_centers(d))
    if not refine:
        return mesh
    cents = mesh.nodes[mesh.regions].mean(axis=1)
    return delaunay_triangulate(np.vstack([mesh.nodes, cents]))


# --- d = 2 Laplace-margin angles -------------------------------------------

def laplace_decompose(x):
    """(R, W) for bivariate vectors in Laplace margins, W in [-2, 2)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    r = np.abs(x).sum(axis=1)
    if np.any(r <= 0):
        raise ValueError("zero vector has no angle")
    eps = np.where(x[:, 1] / r >= 0, 1.0, -1.0)
    w = eps * (1.0 - x[:, 0] / r)
    # the negative x1 axis gives w = 2, which is the same direction as -2
    w = np.where(w >= 2.0, w - 4.0, w)
    return (r[0], w[0]) if single else (r, w)


def laplace_direction(w):
    """Unit-L1 direction for Laplace angles ``w``.

    x1 = 1 - |w| and x2 = sign(w) (1 - |x1|); this is the exact inverse of
    ``laplace_decompose`` in all four quadrants.
    """
    w = np.asarray(w, dtype=float)
    x1 = 1.0 - np.abs(w)
    x2 = np.where(w >= 0, 1.0, -1.0) * (1.0 - np.abs(x1))
    return np.stack([x1, x2], axis=-1)


def laplace_recompose(r, w):
    r = np.asarray(r, dtype=float)
    return r[..., None] * laplace_direction(w)


class LaplaceMesh:
    """Cyclic reference angles on [-2, 2) for bivariate Laplace margins.

    Nodes are held as unit-L1 direction vectors so the gauge machinery for
    simplex meshes applies unchanged; region k joins node k to node k+1
    (the last region wraps to node 0).
    """

    dim = 2
    laplace = True

    def __init__(self, angles):
        a = np.sort(np.asarray(angles, dtype=float))
        if a.ndim != 1 or len(a) < 3:
            raise ValueError("need at least three Laplace reference angles")
        if a[0] < -2 or a[-1] >= 2 or np.any(np.diff(a) <= 0):
            raise ValueError("Laplace angles must be distinct and lie in [-2, 2)")
        if np.any(np.diff(np.append(a, a[0] + 4.0)) >= 2):
            raise ValueError("consecutive Laplace angles must be less than a half-turn apart")
        a.setflags(write=False)
        self.angles = a
        self.nodes = laplace_direction(a)
        self.nodes.setflags(write=False)
        n = len(a)
        self.regions = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
        self.regions.setflags(write=False)
        self.neighbor_pairs = [(((k - 1) % n, k),) for k in range(n)]

    @classmethod
    def regular(cls, n):
        """``n`` equally spaced angles starting at -2."""
        return cls(-2.0 + 4.0 * np.arange(n) / n)

    @property
    def n_nodes(self):
        return len(self.angles)

    @property
    def n_regions(self):
        return len(self.angles)

    @property
    def box_nodes(self):
        """Positive and negative parts of node coordinates: the box is [-1, 1]^2."""
        return np.hstack([np.maximum(self.nodes, 0), np.maximum(-self.nodes, 0)])

    def locate(self, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if np.any(w < -2) or np.any(w >= 2):
            raise ValueError("Laplace angles lie in [-2, 2)")
        n = self.n_nodes
        k = (np.searchsorted(self.angles, w, side="right") - 1) % n
        u = laplace_direction(w)
        a = self.nodes[self.regions[k, 0]]
        b = self.nodes[self.regions[k, 1]]
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        ca = (u[:, 0] * b[:, 1] - u[:, 1] * b[:, 0]) / det
        cb = (a[:, 0] * u[:, 1] - a[:, 1] * u[:, 0]) / det
        return k, np.column_stack([ca, cb])

    def basis(self, w):
        k, c = self.locate(w)
        B = np.zeros((len(k), self.n_nodes))
        rows = np.arange(len(k))
        np.add.at(B, (rows, self.regions[k, 0]), c[:, 0])
        np.add.at(B, (rows, self.regions[k, 1]), c[:, 1])
        return B

    def decompose(self, x):
        return laplace_decompose(np.atleast_2d(x))

    def direction(self, w):
        return laplace_direction(w)

    def to_json(self):
        return json.dumps({"dim": 2, "laplace_angles": self.angles.tolist()})


def mesh_from_json(text):
    obj = json.loads(text) if isinstance(text, str) else text
    if "laplace_angles" in obj:
        return LaplaceMesh(obj["laplace_angles"])
    return SimplexMesh.from_json(obj)
