"""Seeded symmetric test shapes, outliers, missing parts and noisy matches."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .geometry import (
    CorrespondenceSet,
    Label,
    PointCloud,
    SymmetryPlane,
    bbox_diagonal,
    knn_graph,
    plane_points,
    random_rotation,
)

SHAPES = ("mirrored-blob", "ellipsoid", "box", "cylinder-union")
DEFAULT_JITTER = 0.002


@dataclass(frozen=True)
class SynthSpec:
    shape: str = "mirrored-blob"
    n: int = 2000
    alpha: float = 0.0
    gamma: float = 0.0
    jitter_sigma: float = DEFAULT_JITTER
    pose: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.n < 100:
            raise ValueError("n must be >= 100")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    plane: SymmetryPlane
    center: np.ndarray
    pairs: CorrespondenceSet
    spec: SynthSpec | None = None

    def record(self, scale: float | None = None) -> dict:
        """Sidecar fields; plane points sit at half the given scale."""
        half = 0.5 * (scale if scale is not None else 1.0)
        pa, pb, pc = plane_points(self.plane, self.center, half)
        rec = {
            "normal": self.plane.normal,
            "offset": self.plane.offset,
            "point_a": pa,
            "point_b": pb,
            "point_c": pc,
            "center": self.center,
        }
        if self.spec is not None:
            for k, v in asdict(self.spec).items():
                rec[f"spec_{k}"] = v
            rec["seed"] = self.spec.seed
        return rec


# ------------------------------------------------------------ base surfaces
# Every sampler returns points with x > 0 only; the warp below commutes with
# x -> -x but breaks every other reflection and rotation of the base shape.


def _warp(p: np.ndarray) -> np.ndarray:
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.column_stack([x * (1.0 + 0.3 * y), y + 0.3 * z * z + 0.2 * z, z + 0.35 * y * y - 0.15 * y])


def _unit_vectors(rng, m):
    u = rng.normal(size=(m, 3))
    return u / np.linalg.norm(u, axis=1)[:, None]


def _half(pts, m):
    pts = pts[pts[:, 0] > 1e-6]
    if pts.shape[0] < m:
        raise RuntimeError("sampler produced too few half-shape points")
    return pts[:m]


def _ellipsoid(rng, m):
    u = _unit_vectors(rng, 4 * m + 64)
    return _half(u * np.array([0.8, 1.0, 0.55]), m)


def _blob(rng, m):
    # star-shaped surface whose radius is even in x
    k = 6
    freq = rng.normal(scale=2.0, size=(k, 3))
    phase = rng.uniform(0, 2 * math.pi, size=k)
    amp = rng.uniform(0.04, 0.09, size=k)
    u = _unit_vectors(rng, 4 * m + 64)
    feat = np.column_stack([u[:, 0] ** 2, u[:, 1], u[:, 2]])
    r = 1.0 + np.cos(feat @ freq.T + phase) @ amp
    return _half(u * r[:, None] * np.array([0.75, 1.0, 0.6]), m)


def _box(rng, m):
    ext = np.array([0.8, 1.0, 0.6])
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    total = 4 * m + 64
    face_axis = rng.choice(3, size=total, p=areas / areas.sum())
    side = rng.choice([-1.0, 1.0], size=total)
    p = (rng.uniform(-0.5, 0.5, size=(total, 3))) * ext
    p[np.arange(total), face_axis] = 0.5 * side * ext[face_axis]
    return _half(p, m)


def _cylinder_surface(rng, count, radius, half_len, axis):
    lat = 2 * math.pi * radius * 2 * half_len
    cap = math.pi * radius**2
    which = rng.choice(3, size=count, p=np.array([lat, cap, cap]) / (lat + 2 * cap))
    th = rng.uniform(0, 2 * math.pi, size=count)
    rr = np.where(which == 0, radius, radius * np.sqrt(rng.uniform(size=count)))
    t = np.where(which == 0, rng.uniform(-half_len, half_len, size=count),
                 np.where(which == 1, half_len, -half_len))
    a = rr * np.cos(th)
    b = rr * np.sin(th)
    if axis == 0:
        return np.column_stack([t, a, b])
    return np.column_stack([a, t, b])


def _cylinder_union(rng, m):
    total = 6 * m + 64
    body = _cylinder_surface(rng, total, 0.35, 0.8, axis=1)
    arms = _cylinder_surface(rng, total, 0.18, 0.9, axis=0)
    arms[:, 1] += 0.3
    in_arms = (body[:, 1] - 0.3) ** 2 + body[:, 2] ** 2 < 0.18**2
    in_arms &= np.abs(body[:, 0]) < 0.9
    in_body = arms[:, 0] ** 2 + arms[:, 2] ** 2 < 0.35**2
    pts = np.vstack([body[~in_arms], arms[~in_body]])
    pts = pts[rng.permutation(pts.shape[0])]
    return _half(pts, m)


_SAMPLERS = {
    "mirrored-blob": _blob,
    "ellipsoid": _ellipsoid,
    "box": _box,
    "cylinder-union": _cylinder_union,
}


def generate_symmetric_cloud(spec: SynthSpec) -> tuple[PointCloud, GroundTruth]:
    """Exactly mirrored sampling of a warped half-shape.

    The canonical plane is x = 0. With ``spec.pose`` a random rigid motion is
    applied and carried into the ground truth; jitter (relative to the bbox
    diagonal) comes last. Outlier injection and part removal from ``spec``
    are applied by ``make_model``.
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.n // 2
    half = _warp(_SAMPLERS[spec.shape](rng, m))
    mirror = half * np.array([-1.0, 1.0, 1.0])
    pts = np.vstack([half, mirror])
    perm = rng.permutation(2 * m)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(2 * m)
    pts = pts[perm]
    pairs = np.column_stack([inv[:m], inv[m:]])

    normal = np.array([1.0, 0.0, 0.0])
    center = np.array([0.0, *pts[:, 1:].mean(axis=0)])
    offset = 0.0
    if spec.pose:
        R = random_rotation(rng)
        t = rng.uniform(-1.0, 1.0, size=3)
        pts = pts @ R.T + t
        normal = R @ normal
        center = R @ center + t
        offset = float(normal @ t)
    if spec.jitter_sigma > 0:
        pts = pts + rng.normal(scale=spec.jitter_sigma * bbox_diagonal(pts), size=pts.shape)
    plane = SymmetryPlane(normal, offset)
    cloud = PointCloud(pts, np.full(pts.shape[0], Label.SURFACE), id=f"{spec.shape}-{spec.seed}")
    return cloud, GroundTruth(plane, center, CorrespondenceSet(pairs), spec)


def add_outliers(cloud: PointCloud, alpha: float, seed: int) -> PointCloud:
    """Append floor(alpha/100 * n) uniform points from the 1.2x-expanded bbox."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    count = int(math.floor(alpha / 100.0 * len(cloud) + 1e-9))
    if count == 0:
        return cloud
    rng = np.random.default_rng(seed)
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    mid, half = 0.5 * (lo + hi), 0.6 * (hi - lo)
    extra = rng.uniform(mid - half, mid + half, size=(count, 3))
    labels = np.r_[cloud.label_array(), np.full(count, Label.OUTLIER, dtype=np.int8)]
    return PointCloud(np.vstack([cloud.points, extra]), labels, cloud.id)


def knn_connected(points: np.ndarray, neighbors: int) -> bool:
    n = points.shape[0]
    if n <= neighbors:
        return n <= 1
    import scipy.sparse as sp

    idx, _ = knn_graph(points, neighbors)
    rows = np.repeat(np.arange(n), neighbors)
    g = sp.coo_matrix((np.ones(rows.size), (rows, idx.ravel())), shape=(n, n))
    return connected_components(g, directed=False)[0] == 1


def remove_connected_part(cloud: PointCloud, gamma: float, seed: int,
                          neighbors: int = 12, retries: int = 10,
                          return_removed: bool = False):
    """Remove the floor(gamma n) points nearest to a random seed point.

    The remaining cloud must keep a connected kNN graph; otherwise another
    seed point is drawn, up to ``retries`` times.
    """
    if not 0 <= gamma < 0.5:
        raise ValueError("gamma must lie in [0, 0.5)")
    n = len(cloud)
    count = int(math.floor(gamma * n + 1e-9))
    if count == 0:
        return (cloud, np.zeros(0, dtype=np.int64)) if return_removed else cloud
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        s = int(rng.integers(n))
        _, removed = cloud.tree.query(cloud.points[s], k=count)
        removed = np.atleast_1d(removed)
        keep = np.ones(n, dtype=bool)
        keep[removed] = False
        if knn_connected(cloud.points[keep], neighbors):
            out = cloud.subset(np.flatnonzero(keep))
            return (out, np.sort(removed)) if return_removed else out
    raise RuntimeError(f"no removal of {count} points keeps the cloud connected after {retries} tries")


def corrupt_correspondences(corrs: CorrespondenceSet, outlier_frac: float, perturb_sigma: float,
                            cloud: PointCloud, seed: int) -> CorrespondenceSet:
    """Replace ceil(frac q) pairs by random pairs and jitter the rest.

    Inlier pairs keep their first index; the partner is re-targeted to the
    nearest unused cloud point of its Gaussian-perturbed position. Outlier
    pairs are random pairings of unused indices, never an original pair.
    """
    if not 0 <= outlier_frac <= 1:
        raise ValueError("outlier_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    P = corrs.pairs
    q = len(corrs)
    n_out = int(math.ceil(outlier_frac * q - 1e-9))
    perm = rng.permutation(q)
    out_idx = np.sort(perm[:n_out])
    in_idx = np.sort(perm[n_out:])

    n = len(cloud)
    used = np.zeros(n, dtype=bool)
    used[P[in_idx, 0]] = True
    new_pairs = []
    for r in in_idx:
        i, j = int(P[r, 0]), int(P[r, 1])
        if perturb_sigma > 0:
            target = cloud.points[j] + rng.normal(scale=perturb_sigma, size=3)
            k = 8
            while True:
                kk = min(k, n)
                _, cand = cloud.tree.query(target, k=kk)
                free = [int(c) for c in np.atleast_1d(cand) if not used[c]]
                if free or kk == n:
                    break
                k *= 4
            j = free[0]
        used[j] = True
        new_pairs.append((i, j))

    original = corrs.as_set()
    pool = np.flatnonzero(~used)
    for _ in range(1000):
        pick = rng.choice(pool, size=2 * n_out, replace=False) if n_out else np.zeros(0, int)
        rand = [tuple(sorted((int(a), int(b)))) for a, b in pick.reshape(-1, 2)]
        if not any(p in original for p in rand):
            break
    else:
        raise RuntimeError("could not draw outlier pairs disjoint from the originals")
    return CorrespondenceSet(new_pairs + rand)


def make_model(spec: SynthSpec, neighbors: int = 12) -> tuple[PointCloud, GroundTruth]:
    """Symmetric cloud with the ``SynthSpec`` missing part (gamma) and outliers (alpha)."""
    cloud, gt = generate_symmetric_cloud(spec)
    if spec.gamma > 0:
        cloud = remove_connected_part(cloud, spec.gamma, spec.seed + 7919, neighbors)
    if spec.alpha > 0:
        cloud = add_outliers(cloud, spec.alpha, spec.seed + 104729)
    return cloud, gt
