import math

import numpy as np
import pytest

from conftest import random_plane
from symplane.evaluation import deviation_angle
from symplane.geometry import SymmetryPlane, normalize_cloud, reflect_point
from symplane.refine import (
    bisector_planes,
    dedupe_planes,
    filter_outliers,
    half_sample_mode,
    keypoint_vote_planes,
    pca_planes,
    refine_plane,
    select_and_refine,
    symmetry_score,
)
from symplane.synth import SynthSpec, add_outliers, generate_symmetric_cloud


def _normalized(spec):
    cloud, gt = generate_symmetric_cloud(spec)
    ncloud, tf = normalize_cloud(cloud)
    return ncloud, tf.plane_forward(gt.plane), gt


def test_half_sample_mode():
    assert half_sample_mode([1.0, 2.0, 2.05, 2.2, 9.0]) == pytest.approx(2.025)
    assert half_sample_mode([3.0]) == 3.0
    rng = np.random.default_rng(0)
    x = np.r_[rng.normal(5, 0.1, 500), rng.uniform(0, 100, 200)]
    assert abs(half_sample_mode(x) - 5) < 0.1
    with pytest.raises(ValueError):
        half_sample_mode([])


def test_filter_outliers_removes_most_outliers():
    cloud, _ = generate_symmetric_cloud(SynthSpec(n=1500, seed=1))
    noisy = add_outliers(cloud, 50, 2)
    keep = filter_outliers(noisy.points)
    surface = keep < len(cloud)
    assert surface.sum() >= 0.9 * len(cloud)
    assert (~surface).sum() <= 0.2 * (len(noisy) - len(cloud))
    assert np.all(np.diff(keep) > 0)


def test_filter_outliers_clean_keeps_nearly_all():
    cloud, _ = generate_symmetric_cloud(SynthSpec(n=1500, seed=3))
    assert len(filter_outliers(cloud.points)) >= 0.97 * len(cloud)


def test_symmetry_score_peaks_at_truth():
    ncloud, plane, _ = _normalized(SynthSpec(n=1500, seed=4, pose=True))
    best = symmetry_score(ncloud.points, plane, 0.02)
    for p in pca_planes(ncloud.points):
        if deviation_angle(p.normal, plane.normal) > 10:
            assert symmetry_score(ncloud.points, p, 0.02) < best


def test_refine_recovers_from_small_tilt():
    ncloud, plane, _ = _normalized(SynthSpec(n=1500, seed=5, pose=True))
    rng = np.random.default_rng(0)
    ax = np.cross(plane.normal, rng.normal(size=3))
    ax /= np.linalg.norm(ax)
    t = math.radians(4)
    start = SymmetryPlane(math.cos(t) * plane.normal + math.sin(t) * ax, plane.offset + 0.01)
    out, rounds = refine_plane(ncloud.points, start, sigma=0.02)
    assert deviation_angle(out.normal, plane.normal) < 0.5
    assert 1 <= rounds <= 30


def test_pca_planes_orthonormal(rng):
    P = rng.normal(size=(200, 3)) * [3, 2, 1]
    V = np.array([p.normal for p in pca_planes(P)])
    assert np.allclose(V @ V.T, np.eye(3), atol=1e-12)
    for p in pca_planes(P):
        assert abs(p.signed_distance(P.mean(0))) < 1e-12


def test_bisector_planes_rank_true_pair_first():
    ncloud, plane, gt = _normalized(SynthSpec(n=1000, seed=6, jitter_sigma=0.0))
    true_pairs = gt.pairs.pairs[:3]
    rng = np.random.default_rng(1)
    junk = rng.integers(0, len(ncloud), size=(20, 2))
    planes = bisector_planes(ncloud.points, np.vstack([junk, true_pairs]), 2, 0.02)
    assert deviation_angle(planes[0].normal, plane.normal) < 1e-6
    assert bisector_planes(ncloud.points, np.array([[1, 1]]), 2, 0.02) == []


def test_dedupe_planes():
    p = SymmetryPlane([1, 0, 0], 0.1)
    q = SymmetryPlane([-1, 1e-3, 0], -0.1)
    r = SymmetryPlane([0, 1, 0], 0.1)
    out = dedupe_planes([p, q, r, p])
    assert len(out) == 2 and out[0] is p and out[1] is r


def test_keypoint_votes_find_mirror():
    ncloud, plane, gt = _normalized(SynthSpec(n=1000, seed=7, jitter_sigma=0.0))
    kp = np.unique(gt.pairs.pairs[:15].ravel())
    out = keypoint_vote_planes(ncloud.points, kp, 3)
    assert deviation_angle(out[0].normal, plane.normal) < 1e-6
    assert keypoint_vote_planes(ncloud.points, kp[:1], 3) == []


def test_select_and_refine_prefers_truth():
    ncloud, plane, _ = _normalized(SynthSpec(n=1500, seed=8, pose=True))
    cands = pca_planes(ncloud.points) + [plane, random_plane(np.random.default_rng(2))]
    out, info = select_and_refine(ncloud.points, cands)
    assert deviation_angle(out.normal, plane.normal) < 0.5
    assert len(info["candidate_scores"]) <= len(cands)
    assert info["candidate_scores"][info["chosen"]] == max(info["candidate_scores"])
