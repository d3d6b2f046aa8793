import math

import numpy as np
import pytest

from symplane.evaluation import sde
from symplane.geometry import CorrespondenceSet, Label, PointCloud
from symplane.synth import (
    SHAPES,
    SynthSpec,
    add_outliers,
    corrupt_correspondences,
    generate_symmetric_cloud,
    knn_connected,
    make_model,
    remove_connected_part,
)


@pytest.mark.parametrize("shape", SHAPES)
def test_exact_mirror_and_determinism(shape):
    spec = SynthSpec(shape=shape, n=600, jitter_sigma=0.0, seed=3)
    a, gt = generate_symmetric_cloud(spec)
    b, _ = generate_symmetric_cloud(spec)
    assert np.array_equal(a.points, b.points)
    assert len(a) == 600
    assert sde(a, gt.plane) < 1e-12
    P = a.points
    i, j = gt.pairs.pairs.T
    assert np.allclose(P[j], P[i] * [-1, 1, 1], atol=0)


def test_pose_carried_into_ground_truth():
    spec = SynthSpec(n=400, jitter_sigma=0.0, pose=True, seed=5)
    cloud, gt = generate_symmetric_cloud(spec)
    assert sde(cloud, gt.plane) < 1e-12
    assert not np.allclose(np.abs(gt.plane.normal), [1, 0, 0])
    P = cloud.points
    i, j = gt.pairs.pairs.T
    assert np.allclose(P[i] - P[j], np.outer((P[i] - P[j]) @ gt.plane.normal, gt.plane.normal), atol=1e-12)


def test_spec_validation():
    for kw in ({"shape": "teapot"}, {"n": 10}, {"alpha": -1}, {"gamma": 0.6}, {"jitter_sigma": -1}):
        with pytest.raises(ValueError):
            SynthSpec(**kw)


def test_add_outliers():
    cloud, _ = generate_symmetric_cloud(SynthSpec(n=400, seed=1))
    assert add_outliers(cloud, 0, 0) is cloud
    big = add_outliers(cloud, 100, 0)
    assert len(big) == 800
    assert np.array_equal(big.points[:400], cloud.points)
    lab = big.label_array()
    assert np.all(lab[:400] == Label.SURFACE) and np.all(lab[400:] == Label.OUTLIER)
    half = add_outliers(cloud, 37.5, 0)
    assert len(half) == 400 + 150


def test_remove_connected_part():
    cloud, _ = generate_symmetric_cloud(SynthSpec(n=1000, seed=2))
    assert remove_connected_part(cloud, 0.0, 0) is cloud
    out, removed = remove_connected_part(cloud, 0.28, 4, return_removed=True)
    assert len(out) == 1000 - math.floor(0.28 * 1000)
    assert knn_connected(out.points, 12)
    # the removed set is the ball of nearest points around one seed: connected
    assert knn_connected(cloud.points[removed], 6)
    keep = np.setdiff1d(np.arange(1000), removed)
    assert np.array_equal(out.points, cloud.points[keep])


def test_make_model_counts():
    cloud, _ = make_model(SynthSpec(n=1000, alpha=50, gamma=0.2, seed=0))
    assert len(cloud) == 800 + 400


def _pairs(seed=0):
    cloud, gt = generate_symmetric_cloud(SynthSpec(n=600, seed=seed))
    return cloud, gt.pairs


def test_corrupt_identity():
    cloud, pairs = _pairs()
    out = corrupt_correspondences(pairs, 0.0, 0.0, cloud, 0)
    assert out.as_set() == pairs.as_set()


def test_corrupt_all_outliers():
    cloud, pairs = _pairs()
    out = corrupt_correspondences(pairs, 1.0, 0.0, cloud, 1)
    assert len(out) == len(pairs)
    assert not (out.as_set() & pairs.as_set())


@pytest.mark.parametrize("frac", [0.3, 0.65])
def test_corrupt_counts_and_determinism(frac):
    cloud, pairs = _pairs(2)
    a = corrupt_correspondences(pairs, frac, 0.01, cloud, 7)
    b = corrupt_correspondences(pairs, frac, 0.01, cloud, 7)
    assert np.array_equal(a.pairs, b.pairs)
    assert len(a) == len(pairs)
    assert len(np.unique(a.pairs)) == 2 * len(a)
    n_out = math.ceil(frac * len(pairs))
    # without jitter the inliers are exactly the surviving originals
    c = corrupt_correspondences(pairs, frac, 0.0, cloud, 7)
    assert len(c.as_set() & pairs.as_set()) == len(pairs) - n_out


def test_corrupt_bad_fraction():
    cloud, pairs = _pairs()
    with pytest.raises(ValueError):
        corrupt_correspondences(pairs, 1.5, 0.0, cloud, 0)


def test_knn_connected_two_clusters():
    P = np.vstack([np.random.default_rng(0).normal(size=(50, 3)),
                   np.random.default_rng(1).normal(size=(50, 3)) + 100])
    assert not knn_connected(P, 5)
    assert knn_connected(P[:50], 5)
