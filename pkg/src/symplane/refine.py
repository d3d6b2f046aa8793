"""Outlier thinning before the spectral stage and nearest-mirror plane refinement."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .estimator import EstimatorParams, PairStatistics, estimate_plane, l2e_objective
from .geometry import SymmetryPlane, reflect_point


def half_sample_mode(x) -> float:
    """Robust mode of a 1-D sample (repeated shortest-half search)."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise ValueError("empty sample")
    while x.size > 3:
        h = (x.size + 1) // 2
        w = x[h - 1:] - x[: x.size - h + 1]
        i = int(np.argmin(w))
        x = x[i:i + h]
    if x.size == 3:
        # the closer pair of the last three
        x = x[:2] if x[1] - x[0] <= x[2] - x[1] else x[1:]
    return float(np.mean(x))


def _density_pass(P, k, cutoff):
    d, _ = cKDTree(P).query(P, k=k + 1)
    ld = np.log(np.maximum(d[:, k], 1e-300))
    m = half_sample_mode(ld)
    left = m - ld[ld < m]
    s = 1.4826 * float(np.median(left)) if left.size else 0.0
    return ld <= m + cutoff * s if s > 0 else np.ones(len(P), dtype=bool)


def _plane_residuals(P, k):
    _, nb = cKDTree(P).query(P, k=k + 1)
    X = P[nb[:, 1:]]
    mu = X.mean(axis=1)
    Y = X - mu[:, None, :]
    C = np.einsum("nki,nkj->nij", Y, Y)
    _, V = np.linalg.eigh(C)
    return np.abs(np.einsum("ni,ni->n", P - mu, V[:, :, 0]))


def _largest_component(P, k):
    n = len(P)
    _, nb = cKDTree(P).query(P, k=min(k + 1, n))
    rows = np.repeat(np.arange(n), nb.shape[1] - 1)
    g = sp.coo_matrix((np.ones(rows.size), (rows, nb[:, 1:].ravel())), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    counts = np.bincount(lab)
    return lab == int(np.argmax(counts))


def filter_outliers(points, k: int = 12, cutoff: float = 3.0, plane_factor: float = 4.0,
                    rounds: int = 3, trigger: float = 0.01) -> np.ndarray:
    """Indices of points kept as surface samples.

    Sparse points are cut where the log distance to the k-th neighbor exceeds
    the mode by ``cutoff`` left-side robust deviations (repeated while points
    drop out). If that removed more than ``trigger`` of the cloud, points far
    off the plane fitted to their neighbors (beyond ``plane_factor`` times the
    median offset) go too. The largest kNN component is returned.
    """
    P = np.asarray(points, dtype=float)
    n = len(P)
    keep = np.arange(n)
    if n <= k + 1:
        return keep
    for _ in range(rounds):
        ok = _density_pass(P[keep], k, cutoff)
        if ok.all():
            break
        keep = keep[ok]
        if len(keep) <= k + 1:
            return np.arange(n)
    if len(keep) < (1.0 - trigger) * n:
        r = _plane_residuals(P[keep], k)
        keep = keep[r <= plane_factor * np.median(r)]
    keep = keep[_largest_component(P[keep], k)]
    return keep


def symmetry_score(points, plane: SymmetryPlane, sigma: float, tree: cKDTree | None = None) -> float:
    """L2E objective of the nearest-mirror pairing under ``plane``."""
    P = np.asarray(points, dtype=float)
    tree = tree or cKDTree(P)
    _, nn = tree.query(reflect_point(P, plane))
    return l2e_objective(PairStatistics(P, tree.data[nn]), plane.normal, plane.offset, sigma)


def refine_plane(points, plane: SymmetryPlane, sigma: float = 0.05, rounds: int = 30,
                 sample: int = 2000, anneal=(0.05, 0.8), tol_angle: float = 1e-4,
                 tol_omega: float = 1e-6, tree: cKDTree | None = None):
    """Alternate nearest-mirror pairing and L2E plane fits from ``plane``.

    Each round pairs every (sub)sampled point with the cloud point nearest to
    its reflection, then refits the plane from the previous one. The kernel
    width starts at ``anneal[0]`` and shrinks by ``anneal[1]`` per round down
    to ``sigma``. Returns the plane and the number of rounds used.
    """
    P = np.asarray(points, dtype=float)
    tree = tree or cKDTree(P)
    if len(P) > sample:
        Q = P[np.linspace(0, len(P) - 1, sample).round().astype(np.int64)]
    else:
        Q = P
    s = max(sigma, anneal[0]) if anneal else sigma
    it = 0
    for it in range(1, rounds + 1):
        _, nn = tree.query(reflect_point(Q, plane))
        stats = PairStatistics(Q, tree.data[nn])
        params = EstimatorParams(sigma=s, outer_max=20)
        new, _ = estimate_plane(stats, params, v0=plane.normal, omega0=plane.offset)
        c = min(1.0, abs(float(new.normal @ plane.normal)))
        d_ang = math.acos(c)
        d_om = abs(new.offset - plane.offset) if new.normal @ plane.normal >= 0 else abs(new.offset + plane.offset)
        plane = new
        at_floor = s <= sigma
        if at_floor and d_ang < tol_angle and d_om < tol_omega:
            break
        if anneal:
            s = max(sigma, s * anneal[1])
    return plane, it


def pca_planes(points) -> list[SymmetryPlane]:
    """Planes through the centroid normal to each principal axis."""
    P = np.asarray(points, dtype=float)
    c = P.mean(axis=0)
    X = P - c
    _, V = np.linalg.eigh(X.T @ X)
    return [SymmetryPlane(V[:, j], float(V[:, j] @ c)) for j in range(3)]


def bisector_planes(points, pairs, count: int, sigma: float, tree: cKDTree | None = None,
                    screen_sample: int = 400):
    """The ``count`` best-scoring perpendicular bisectors of the given pairs.

    Scores use an evenly strided subsample of ``screen_sample`` points;
    duplicate pairs are scored once.
    """
    P = np.asarray(points, dtype=float)
    tree = tree or cKDTree(P)
    pairs = np.unique(np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if len(pairs) == 0:
        return []
    d = P[pairs[:, 1]] - P[pairs[:, 0]]
    V = d / np.linalg.norm(d, axis=1)[:, None]
    W = 0.5 * np.einsum("ij,ij->i", V, P[pairs[:, 0]] + P[pairs[:, 1]])
    Q = P[np.linspace(0, len(P) - 1, min(screen_sample, len(P))).round().astype(np.int64)]
    scores = np.empty(len(pairs))
    for k in range(len(pairs)):
        refl = Q - 2.0 * np.outer(Q @ V[k] - W[k], V[k])
        dist, _ = tree.query(refl)
        scores[k] = np.sum(np.exp(-dist * dist / (2.0 * sigma * sigma)))
    order = np.argsort(-scores, kind="stable")[:count]
    return [SymmetryPlane(V[k], W[k]) for k in order]


def dedupe_planes(planes, angle_deg: float = 2.0, offset_tol: float = 0.01) -> list[SymmetryPlane]:
    """Drop planes within ``angle_deg`` and ``offset_tol`` of an earlier one."""
    c = math.cos(math.radians(angle_deg))
    out = []
    for p in planes:
        dup = False
        for q in out:
            dot = float(p.normal @ q.normal)
            if abs(dot) >= c and abs(p.offset - math.copysign(1.0, dot) * q.offset) <= offset_tol:
                dup = True
                break
        if not dup:
            out.append(p)
    return out


def select_and_refine(points, candidates, sigma: float = 0.02, tree: cKDTree | None = None,
                      coarse_sample: int = 500, coarse_rounds: int = 12, fine_sample: int = 2000,
                      coarse_tol: tuple[float, float] = (1e-3, 1e-4)):
    """Cheap refinement of every distinct candidate, then a full one of the best scorer.

    Returns the refined plane and a dict with the candidate scores and the
    winning index into the deduplicated list (ties go to the earlier one).
    """
    P = np.asarray(points, dtype=float)
    tree = tree or cKDTree(P)
    candidates = dedupe_planes(candidates)
    scores = []
    coarse = []
    for c in candidates:
        rp, _ = refine_plane(P, c, sigma=sigma, rounds=coarse_rounds, sample=coarse_sample,
                             tol_angle=coarse_tol[0], tol_omega=coarse_tol[1], tree=tree)
        coarse.append(rp)
        scores.append(symmetry_score(P, rp, sigma, tree))
    best = int(np.argmax(scores))
    plane, rounds = refine_plane(P, coarse[best], sigma=sigma, sample=fine_sample, anneal=None, tree=tree)
    return plane, {"candidate_scores": scores, "chosen": best, "fine_rounds": rounds}


def keypoint_vote_planes(points, keypoints, count: int, radius: float | None = None):
    """Bisectors of all keypoint pairs, ranked by how many keypoints they mirror.

    A keypoint votes for a plane when its reflection lands within ``radius``
    (default: twice the mean point spacing) of another keypoint.
    Returns up to ``count`` planes, best first.
    """
    P = np.asarray(points, dtype=float)
    K = P[np.asarray(keypoints, dtype=np.int64)]
    m = len(K)
    if m < 2 or count <= 0:
        return []
    kt = cKDTree(K)
    if radius is None:
        d, _ = cKDTree(P).query(P, k=2)
        radius = 2.0 * float(np.mean(d[:, 1]))
    i, j = np.triu_indices(m, 1)
    d = K[j] - K[i]
    nrm = np.linalg.norm(d, axis=1)
    ok = nrm > 1e-12
    i, j, d, nrm = i[ok], j[ok], d[ok], nrm[ok]
    V = d / nrm[:, None]
    W = 0.5 * np.einsum("ij,ij->i", V, K[i] + K[j])
    votes = np.empty(len(V))
    for a in range(len(V)):
        refl = K - 2.0 * np.outer(K @ V[a] - W[a], V[a])
        dist, _ = kt.query(refl, distance_upper_bound=radius)
        votes[a] = np.count_nonzero(np.isfinite(dist))
    order = np.argsort(-votes, kind="stable")
    out, taken = [], []
    for a in order:
        # skip near-duplicates of planes already taken
        if any(abs(V[a] @ V[b]) > math.cos(math.radians(5)) and
               abs(W[a] - math.copysign(1.0, V[a] @ V[b]) * W[b]) < radius for b in taken):
            continue
        taken.append(a)
        out.append(SymmetryPlane(V[a], float(W[a])))
        if len(out) >= count:
            break
    return out

