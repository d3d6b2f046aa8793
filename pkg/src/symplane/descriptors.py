"""ISS keypoints and symmetry-invariant heat-kernel descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud
from .spectral import SpectralBasis

DEFAULT_P = 64
DEFAULT_KS = 6
DEFAULT_GAMMA = 0.975
MAX_KEYPOINTS = 200
MIN_NEIGHBORS = 5


class NoKeypointsError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    index: int
    position: np.ndarray
    saliency: float


@dataclass(frozen=True, eq=False)
class HksDescriptor:
    values: np.ndarray
    times: np.ndarray


@dataclass(frozen=True, eq=False)
class SignVector:
    signs: np.ndarray


def mean_spacing(cloud: PointCloud) -> float:
    d, _ = cloud.tree.query(cloud.points, k=2)
    return float(np.mean(d[:, 1]))


def local_covariance_eigs(cloud: PointCloud, radius: float, min_neighbors: int = MIN_NEIGHBORS):
    """Descending covariance eigenvalues of each radius neighborhood.

    Rows with fewer than ``min_neighbors`` points are NaN.
    """
    pts = cloud.points
    n = len(pts)
    nbrs = cloud.tree.query_ball_point(pts, radius)
    counts = np.fromiter((len(x) for x in nbrs), dtype=np.int64, count=n)
    flat = np.fromiter((j for x in nbrs for j in x), dtype=np.int64, count=int(counts.sum()))
    owner = np.repeat(np.arange(n), counts)
    safe = np.maximum(counts, 1)[:, None]
    mean = np.zeros((n, 3))
    np.add.at(mean, owner, pts[flat])
    mean /= safe
    diff = pts[flat] - mean[owner]
    cov = np.zeros((n, 3, 3))
    np.add.at(cov, owner, diff[:, :, None] * diff[:, None, :])
    cov /= safe[:, :, None]
    ev = np.linalg.eigvalsh(cov)[:, ::-1]
    ev[counts < min_neighbors] = np.nan
    return ev


def detect_iss_keypoints(cloud: PointCloud, radius: float | None = None,
                         gamma21: float = DEFAULT_GAMMA, gamma32: float = DEFAULT_GAMMA,
                         nms_radius: float | None = None, max_keypoints: int | None = MAX_KEYPOINTS,
                         min_neighbors: int = MIN_NEIGHBORS) -> list[Keypoint]:
    """Intrinsic Shape Signature keypoints.

    A point qualifies when its neighborhood eigenvalues l1 >= l2 >= l3 satisfy
    l2/l1 < gamma21 and l3/l2 < gamma32 and l3 > 0. Survivors must be local
    maxima of the saliency l3 within ``nms_radius`` (near-ties go to the
    lexicographically smaller position). Output is sorted by descending
    saliency, then index.
    """
    if len(cloud) == 0:
        raise NoKeypointsError("point cloud is empty")
    if radius is None:
        radius = 4.0 * mean_spacing(cloud)
    if nms_radius is None:
        nms_radius = radius
    if not radius > 0:
        raise ValueError("radius must be positive")
    if not (0 < gamma21 < 1 and 0 < gamma32 < 1):
        raise ValueError("gamma ratios must lie in (0, 1)")

    ev = local_covariance_eigs(cloud, radius, min_neighbors)
    l1, l2, l3 = ev[:, 0], ev[:, 1], ev[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        ok = (l3 > 1e-15 * np.maximum(l1, 1e-300)) & (l2 / l1 < gamma21) & (l3 / l2 < gamma32)
    ok &= np.isfinite(l3)
    cand = np.flatnonzero(ok)
    if cand.size == 0:
        raise NoKeypointsError("no ISS keypoints; relax the gamma thresholds or radius")

    sal = l3[cand]
    pts = cloud.points[cand]
    # strict total order on candidates: saliency (rounded, since points with
    # the same neighbor set tie up to summation order), then position, so the
    # survivors do not depend on point order
    q = np.round(sal / sal.max(), 10)
    rank = np.empty(cand.size, dtype=np.int64)
    rank[np.lexsort((-pts[:, 2], -pts[:, 1], -pts[:, 0], q))] = np.arange(cand.size)
    groups = cKDTree(pts).query_ball_point(pts, nms_radius)
    counts = np.fromiter((len(g) for g in groups), dtype=np.int64, count=cand.size)
    flat = np.fromiter((b for g in groups for b in g), dtype=np.int64, count=int(counts.sum()))
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    best = np.maximum.reduceat(rank[flat], starts)
    keep = np.flatnonzero(best == rank)
    order = np.lexsort((cand[keep], -sal[keep]))
    keep = keep[order]
    if max_keypoints is not None:
        keep = keep[:max_keypoints]
    return [Keypoint(int(cand[a]), cloud.points[cand[a]].copy(), float(sal[a])) for a in keep]


def hks_time_samples(lambda2: float, lambdak: float, p: int = DEFAULT_P) -> np.ndarray:
    """p times spaced linearly over [10 ln10 / lambdak, 10 ln10 / lambda2]."""
    if not lambda2 > 0:
        raise ValueError("lambda2 must be positive; use the first nonzero eigenvalue")
    if lambdak < lambda2:
        raise ValueError("need lambda2 <= lambdak")
    if p < 2:
        raise ValueError("need p >= 2")
    c = 10.0 * math.log(10.0)
    return np.linspace(c / lambdak, c / lambda2, p)


def hks_matrix(basis: SpectralBasis, indices, p: int = DEFAULT_P, times=None):
    """(len(indices), p) heat kernel signatures plus the sample times."""
    lam = basis.eigenvalues
    if times is None:
        times = hks_time_samples(basis.first_nonzero(), float(lam[-1]), p)
    phi2 = basis.eigenfunctions[np.asarray(indices, dtype=np.int64)] ** 2
    decay = np.exp(-np.outer(lam, times))  # (k, p)
    return phi2 @ decay, np.asarray(times)


def compute_hks(basis: SpectralBasis, indices, p: int = DEFAULT_P) -> list[HksDescriptor]:
    if basis.k < 2:
        raise ValueError("basis needs at least two eigenpairs")
    H, t = hks_matrix(basis, indices, p)
    return [HksDescriptor(h, t) for h in H]


def sign_matrix(basis: SpectralBasis, indices, k_s: int = DEFAULT_KS) -> np.ndarray:
    if k_s + 1 > basis.k:
        raise ValueError(f"k_s={k_s} needs at least {k_s + 1} eigenpairs")
    vals = basis.eigenfunctions[np.asarray(indices, dtype=np.int64), 1:k_s + 1]
    return np.where(vals >= 0, 1, -1).astype(np.int8)


def compute_sign_vectors(basis: SpectralBasis, indices, k_s: int = DEFAULT_KS) -> list[SignVector]:
    return [SignVector(s) for s in sign_matrix(basis, indices, k_s)]


def write_descriptor_csv(path, keypoints, hks, signs) -> None:
    H = np.asarray([h.values if isinstance(h, HksDescriptor) else h for h in hks])
    S = np.asarray([s.signs if isinstance(s, SignVector) else s for s in signs])
    p, ks = H.shape[1], S.shape[1]
    cols = ["index", "x", "y", "z"] + [f"hks{g}" for g in range(p)] + [f"sign{j}" for j in range(ks)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for kp, h, s in zip(keypoints, H, S):
            row = [str(kp.index)] + [repr(float(c)) for c in kp.position]
            row += [repr(float(x)) for x in h] + [str(int(x)) for x in s]
            fh.write(",".join(row) + "\n")
