"""Plane-detection metrics: deviation angle, thresholded plane matching, GTE and SDE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, SymmetryPlane, bbox_diagonal, plane_points, reflect_point


@dataclass(frozen=True)
class EvalThresholds:
    """Angle threshold in radians; ``t_d`` None means 2s (s from the plane points)."""

    t_a: float = math.radians(10.0)
    t_d: float | None = None

    def __post_init__(self):
        if not 0 <= self.t_a <= math.pi / 4 + 1e-12:
            raise ValueError("t_a must lie in [0, pi/4]")
        if self.t_d is not None and self.t_d < 0:
            raise ValueError("t_d must be >= 0")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    fscore: float


@dataclass(frozen=True)
class ErrorMetrics:
    angle_deg: float
    gte: float
    sde: float


def deviation_angle(v_est, v_gt) -> float:
    """Angle in degrees between two normals, blind to their signs."""
    a = np.asarray(v_est, dtype=float)
    b = np.asarray(v_gt, dtype=float)
    c = abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, c)))


def segment_scale(est_points: np.ndarray, gt_points: np.ndarray) -> float:
    """s = min(|pa-pb|, |pa-pc|, |qa-qb|, |qa-qc|)."""
    P, Q = np.asarray(gt_points), np.asarray(est_points)
    return float(min(np.linalg.norm(P[0] - P[1]), np.linalg.norm(P[0] - P[2]),
                     np.linalg.norm(Q[0] - Q[1]), np.linalg.norm(Q[0] - Q[2])))


def plane_match(est: SymmetryPlane, gt: SymmetryPlane, gt_center, cloud: PointCloud,
                thresholds: EvalThresholds = EvalThresholds(), gt_points=None) -> bool:
    """Angle within t_a and estimated center within t_d of the true center.

    The estimated center is the cloud centroid projected onto ``est``. When
    ``gt_points`` (pa, pb, pc) are absent they are synthesized around
    ``gt_center`` at half-diagonal scale, like the estimated ones.
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    if math.radians(deviation_angle(est.normal, gt.normal)) > thresholds.t_a + 1e-12:
        return False
    half = 0.5 * bbox_diagonal(cloud.points)
    e_c = est.project(cloud.centroid)
    q = plane_points(est, cloud.centroid, half)
    g_c = np.asarray(gt_center, dtype=float)
    t_d = thresholds.t_d
    if t_d is None:
        p = np.asarray(gt_points) if gt_points is not None else plane_points(gt, g_c, half)
        t_d = 2.0 * segment_scale(q, p)
    return bool(np.linalg.norm(e_c - g_c) <= t_d)


def precision_recall_fscore(tp: int, fp: int, fn: int) -> EvalReport:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return EvalReport(tp, fp, fn, p, r, f)


def gte(est: SymmetryPlane, gt: SymmetryPlane, normalization=None) -> float:
    """Squared distance between (v, w) 4-vectors, minimized over the sign flip.

    Offsets should be in normalized-cloud units; pass the cloud's
    ``RigidNormalization`` to map both planes there first.
    """
    if normalization is not None:
        est, gt = normalization.plane_forward(est), normalization.plane_forward(gt)
    a = np.r_[est.normal, est.offset]
    b = np.r_[gt.normal, gt.offset]
    return float(min(np.sum((a - b) ** 2), np.sum((a + b) ** 2)))


def sde(cloud: PointCloud, plane: SymmetryPlane, normalize: bool = True) -> float:
    """Mean squared distance from each reflected point to its nearest original.

    With ``normalize`` distances are measured after scaling the cloud to unit
    bounding-box diagonal (a zero-extent cloud keeps scale 1).
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    refl = reflect_point(cloud.points, plane)
    d, _ = cloud.tree.query(refl, k=1)
    scale = 1.0
    if normalize:
        diag = bbox_diagonal(cloud.points)
        scale = 1.0 / diag if diag > 0 else 1.0
    return float(np.mean(d * d)) * scale * scale


def sde_bruteforce(points, plane: SymmetryPlane) -> float:
    """Exhaustive nearest-neighbor SDE without normalization (test oracle)."""
    P = np.asarray(points, dtype=float)
    R = reflect_point(P, plane)
    D = ((R[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
    return float(D.min(axis=1).mean())


def error_metrics(cloud: PointCloud, est: SymmetryPlane, gt: SymmetryPlane, normalization=None) -> ErrorMetrics:
    return ErrorMetrics(deviation_angle(est.normal, gt.normal), gte(est, gt, normalization), sde(cloud, est))


def sweep_angles(count: int = 20) -> np.ndarray:
    return np.linspace(0.0, math.pi / 4, count)


def pr_sweep(angles_deg, detected, t_a_values=None, center_ok=None) -> list[tuple[float, EvalReport]]:
    """Precision/recall per angle threshold over a batch of single-plane models.

    ``angles_deg[i]`` is the deviation for model i (ignored when
    ``detected[i]`` is false). A detection that misses counts as one false
    positive plus one false negative; a failed detection is a false negative.
    """
    ang = np.asarray(angles_deg, dtype=float)
    det = np.asarray(detected, dtype=bool)
    ok = np.ones_like(det) if center_ok is None else np.asarray(center_ok, dtype=bool)
    out = []
    for t in (sweep_angles() if t_a_values is None else t_a_values):
        hit = det & ok & (np.radians(np.where(det, ang, 90.0)) <= t + 1e-12)
        tp = int(hit.sum())
        fp = int((det & ~hit).sum())
        fn = int((~hit).sum())
        out.append((float(t), precision_recall_fscore(tp, fp, fn)))
    return out

