"""Point-cloud container, reflection algebra, normalization and spatial queries."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

_UNIT_TOL = 1e-12


class Label(enum.IntEnum):
    SURFACE = 0
    OUTLIER = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable ordered set of 3D points with optional per-point labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int8, copy=True).ravel()
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must have the same length as points")
            object.__setattr__(self, "labels", _readonly(lab))

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def label_array(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(len(self), dtype=np.int8)
        return np.asarray(self.labels)

    def with_points(self, points, labels=None) -> PointCloud:
        return PointCloud(points, self.labels if labels is None else labels, self.id)

    def subset(self, mask_or_index) -> PointCloud:
        idx = np.asarray(mask_or_index)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels, self.id)


def _require_nonempty(cloud: PointCloud) -> None:
    if len(cloud) == 0:
        raise ValueError("point cloud is empty")


def canonical_sign(v: np.ndarray, tol: float = _UNIT_TOL) -> float:
    """+1 or -1 such that the first component with |v_k| > tol becomes positive."""
    for c in v:
        if abs(c) > tol:
            return 1.0 if c > 0 else -1.0
    return 1.0


@dataclass(frozen=True, eq=False)
class SymmetryPlane:
    """The plane {x : normal . x = offset}, stored in canonical sign."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        v = np.array(self.normal, dtype=float, copy=True).ravel()
        if v.shape != (3,) or not np.all(np.isfinite(v)):
            raise ValueError("normal must be a finite 3-vector")
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValueError("normal must be nonzero")
        w = float(self.offset) / nrm
        v = v / nrm
        s = canonical_sign(v)
        object.__setattr__(self, "normal", _readonly(s * v))
        object.__setattr__(self, "offset", s * w)

    def flipped(self) -> tuple[np.ndarray, float]:
        return -self.normal, -self.offset

    def signed_distance(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.normal - self.offset

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x - np.multiply.outer(self.signed_distance(x), self.normal)

    def householder(self) -> np.ndarray:
        return np.eye(3) - 2.0 * np.outer(self.normal, self.normal)

    def same_as(self, other: SymmetryPlane, atol: float = 1e-10) -> bool:
        return bool(
            np.allclose(self.normal, other.normal, atol=atol)
            and abs(self.offset - other.offset) <= atol
        )

    def __repr__(self) -> str:
        v = ", ".join(f"{c:.6g}" for c in self.normal)
        return f"SymmetryPlane(normal=({v}), offset={self.offset:.6g})"


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Unordered index pairs (i < j) asserting mirror-symmetric matches."""

    pairs: np.ndarray
    costs: np.ndarray | None = None
    disjoint: bool = field(default=True)

    def __post_init__(self):
        p = np.array(self.pairs, dtype=np.int64, copy=True).reshape(-1, 2)
        if np.any(p[:, 0] == p[:, 1]):
            raise ValueError("a pair may not match a point with itself")
        if np.any(p < 0):
            raise ValueError("negative index in correspondence")
        p = np.sort(p, axis=1)
        if len(np.unique(p, axis=0)) != len(p):
            raise ValueError("duplicate pairs")
        if self.disjoint and len(np.unique(p)) != p.size:
            raise ValueError("an index appears in more than one pair")
        object.__setattr__(self, "pairs", _readonly(p))
        if self.costs is not None:
            c = np.array(self.costs, dtype=float, copy=True).ravel()
            if c.shape[0] != p.shape[0]:
                raise ValueError("costs must align with pairs")
            object.__setattr__(self, "costs", _readonly(c))

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}


@dataclass(frozen=True)
class RigidNormalization:
    """x -> (x - centroid) * scale, with scale the reciprocal bbox diagonal."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(
            self, "centroid", _readonly(np.array(self.centroid, dtype=float).reshape(3))
        )

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.centroid) * self.scale

    def invert(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) / self.scale + self.centroid

    def plane_forward(self, plane: SymmetryPlane) -> SymmetryPlane:
        v = plane.normal
        return SymmetryPlane(v, (plane.offset - v @ self.centroid) * self.scale)

    def plane_inverse(self, plane: SymmetryPlane) -> SymmetryPlane:
        v = plane.normal
        return SymmetryPlane(v, plane.offset / self.scale + v @ self.centroid)


def reflect_point(x, plane: SymmetryPlane) -> np.ndarray:
    """(I - 2vv^T)x + 2wv; also accepts an (n, 3) array."""
    x = np.asarray(x, dtype=float)
    v = plane.normal
    d = x @ v - plane.offset
    return x - 2.0 * np.multiply.outer(d, v)


def reflect_cloud(cloud: PointCloud, plane: SymmetryPlane) -> PointCloud:
    _require_nonempty(cloud)
    return cloud.with_points(reflect_point(cloud.points, plane))


def bbox_diagonal(points) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, RigidNormalization]:
    """Center at the centroid and scale to unit bounding-box diagonal."""
    _require_nonempty(cloud)
    diag = bbox_diagonal(cloud.points)
    if diag == 0.0:
        raise ValueError("degenerate cloud: all points identical")
    tf = RigidNormalization(cloud.centroid, 1.0 / diag)
    return cloud.with_points(tf.apply(cloud.points)), tf


def knn_query(cloud: PointCloud, query, k: int) -> list[tuple[int, float]]:
    """k nearest points to ``query``, ascending distance, ties by lower index."""
    n = len(cloud)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    q = np.asarray(query, dtype=float).reshape(3)
    dk, _ = cloud.tree.query(q, k=k)
    radius = float(np.atleast_1d(dk)[-1])
    # collect every point tied with the k-th distance, then sort exactly
    cand = np.asarray(cloud.tree.query_ball_point(q, radius * (1 + 1e-12) + 1e-300), dtype=np.int64)
    dist = np.linalg.norm(cloud.points[cand] - q, axis=1)
    order = np.lexsort((cand, dist))[:k]
    return [(int(cand[o]), float(dist[o])) for o in order]


def knn_graph(points: np.ndarray, k: int, tree: cKDTree | None = None):
    """Neighbor indices and distances (self excluded) for every point."""
    tree = cKDTree(points) if tree is None else tree
    d, idx = tree.query(points, k=k + 1)
    return idx[:, 1:], d[:, 1:]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def plane_points(plane: SymmetryPlane, center, half_size: float) -> np.ndarray:
    """Three non-collinear points on ``plane`` around the projection of ``center``.

    Rows are (q_a, q_b, q_c) with q_a and q_c symmetric about the center, so
    (q_a + q_c) / 2 recovers it.
    """
    c = plane.project(np.asarray(center, dtype=float))
    u, w = in_plane_basis(plane.normal)
    return np.stack([c + half_size * u, c + half_size * w, c - half_size * u])


def in_plane_basis(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    a = np.zeros(3)
    a[np.argmin(np.abs(v))] = 1.0
    u = np.cross(v, a)
    u /= np.linalg.norm(u)
    return u, np.cross(v, u)


def plane_from_points(pa, pb, pc) -> SymmetryPlane:
    pa, pb, pc = (np.asarray(p, dtype=float) for p in (pa, pb, pc))
    n = np.cross(pa - pb, pa - pc)
    if np.linalg.norm(n) == 0:
        raise ValueError("plane points are collinear")
    n = n / np.linalg.norm(n)
    return SymmetryPlane(n, n @ pa)
