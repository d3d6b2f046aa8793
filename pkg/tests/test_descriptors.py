import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symplane.descriptors import (
    NoKeypointsError,
    compute_hks,
    compute_sign_vectors,
    detect_iss_keypoints,
    hks_matrix,
    hks_time_samples,
    local_covariance_eigs,
    sign_matrix,
    write_descriptor_csv,
)
from symplane.geometry import PointCloud
from symplane.spectral import SpectralBasis, build_laplacian, solve_eigens
from symplane.synth import SynthSpec, generate_symmetric_cloud

LN10 = math.log(10.0)


def _cube_surface(m=30):
    g = np.linspace(0, 1, m)
    a, b = np.meshgrid(g, g)
    a, b = a.ravel(), b.ravel()
    faces = []
    for c in (0.0, 1.0):
        faces += [np.column_stack([a, b, np.full_like(a, c)]),
                  np.column_stack([a, np.full_like(a, c), b]),
                  np.column_stack([np.full_like(a, c), a, b])]
    return np.unique(np.round(np.vstack(faces), 12), axis=0)


def test_flat_grid_has_no_keypoints():
    g = np.linspace(0, 1, 30)
    a, b = np.meshgrid(g, g)
    grid = PointCloud(np.column_stack([a.ravel(), b.ravel(), np.zeros(a.size)]))
    with pytest.raises(NoKeypointsError):
        detect_iss_keypoints(grid)


def test_cube_keypoints_near_edges():
    P = _cube_surface()
    cloud = PointCloud(P)
    kps = detect_iss_keypoints(cloud)
    assert len(kps) > 0
    # distance to the nearest cube edge: second smallest distance to a face
    for kp in kps:
        d = np.sort(np.minimum(kp.position, 1 - kp.position))
        assert d[1] < 0.2
    # direct covariance at a corner and at a face center
    r = 4 * (1 / 29)
    ev = local_covariance_eigs(cloud, r)
    corner = int(np.argmin(np.linalg.norm(P, axis=1)))
    face = int(np.argmin(np.linalg.norm(P - [0.5, 0.5, 0.0], axis=1)))
    nb = P[np.linalg.norm(P - P[corner], axis=1) <= r]
    ref = np.sort(np.linalg.eigvalsh(np.cov(nb.T, bias=True)))[::-1]
    assert np.allclose(ev[corner], ref, rtol=1e-9, atol=1e-15)
    assert ev[corner, 2] > 1e-3 * ev[corner, 0]
    assert ev[face, 2] < 1e-12


def test_large_nms_radius_single_keypoint():
    kps = detect_iss_keypoints(PointCloud(_cube_surface(15)), nms_radius=10.0)
    assert len(kps) == 1


def test_keypoints_sorted_and_unique():
    kps = detect_iss_keypoints(PointCloud(_cube_surface(20)))
    sal = [k.saliency for k in kps]
    assert sal == sorted(sal, reverse=True) and all(s > 0 for s in sal)
    assert len({k.index for k in kps}) == len(kps)


def test_keypoints_permutation_invariant():
    cloud, _ = generate_symmetric_cloud(SynthSpec("box", n=1500, seed=4))
    perm = np.random.default_rng(0).permutation(len(cloud))
    a = detect_iss_keypoints(cloud)
    b = detect_iss_keypoints(cloud.subset(perm))
    pa = np.array(sorted(map(tuple, (k.position for k in a))))
    pb = np.array(sorted(map(tuple, (k.position for k in b))))
    assert np.array_equal(pa, pb)


def test_time_samples_examples():
    assert np.allclose(hks_time_samples(1, 10, 2), [LN10, 10 * LN10], rtol=1e-15)
    assert np.allclose(hks_time_samples(2, 2, 5), 10 * LN10 / 2)
    t = hks_time_samples(1, 10, 3)
    assert abs(t[1] - (LN10 + 10 * LN10) / 2) < 1e-12
    assert abs(t[0] - 2.302585) < 1e-6 and abs(t[-1] - 23.025851) < 1e-6


def test_time_samples_errors():
    with pytest.raises(ValueError):
        hks_time_samples(0.0, 1.0)
    with pytest.raises(ValueError):
        hks_time_samples(1.0, 2.0, 1)


def test_hks_single_constant_pair():
    c = 0.4
    b = SpectralBasis(np.array([0.0]), np.full((5, 1), c), np.ones(5))
    H, _ = hks_matrix(b, [0, 3], times=np.array([0.1, 1.0, 10.0]))
    assert np.allclose(H, c * c)


@pytest.fixture(scope="module")
def mirrored_basis():
    cloud, gt = generate_symmetric_cloud(SynthSpec("mirrored-blob", n=1200, jitter_sigma=0.0, seed=1))
    lap = build_laplacian(cloud, 12)
    return cloud, gt, solve_eigens(lap, 40, method="dense")


def test_hks_mirror_invariance(mirrored_basis):
    _, gt, b = mirrored_basis
    i, j = gt.pairs.pairs[:, 0], gt.pairs.pairs[:, 1]
    Hi, _ = hks_matrix(b, i, 16)
    Hj, _ = hks_matrix(b, j, 16)
    assert np.max(np.abs(Hi - Hj) / Hi) < 1e-6


def test_hks_positive_and_decreasing(mirrored_basis):
    _, _, b = mirrored_basis
    hs = compute_hks(b, range(0, 1200, 37), 32)
    for h in hs:
        assert np.all(h.values > 0)
        assert np.all(np.diff(h.values) <= 1e-9)


def test_hks_long_time_limit(mirrored_basis):
    _, _, b = mirrored_basis
    t = 50.0 / b.first_nonzero()
    H, _ = hks_matrix(b, [0, 10], times=np.array([t]))
    lim = b.eigenfunctions[[0, 10], 0] ** 2
    assert np.all(np.abs(H[:, 0] - lim) <= math.exp(-t * b.first_nonzero()) * b.k * np.max(b.eigenfunctions**2))


def test_sign_vectors_rule():
    Phi = np.array([[1.0, 0.3, -0.2], [1.0, 0.0, 0.5]])
    b = SpectralBasis(np.array([0.0, 1.0, 2.0]), Phi, np.ones(2))
    S = sign_matrix(b, [0, 1], 2)
    assert S.tolist() == [[1, -1], [1, 1]]
    assert all(set(np.unique(s.signs)) <= {-1, 1} for s in compute_sign_vectors(b, [0, 1], 2))
    with pytest.raises(ValueError):
        sign_matrix(b, [0], 3)


def test_sign_vectors_local_agreement():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(1500, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    cloud = PointCloud(u * [1.0, 0.8, 0.6])
    b = solve_eigens(build_laplacian(cloud, 10), 10)
    S = sign_matrix(b, np.arange(len(cloud)), 6)
    _, nb = cloud.tree.query(cloud.points, k=2)
    agree = np.sum(S == S[nb[:, 1]], axis=1)
    assert np.mean(agree >= 6 - 2) >= 0.95


def test_descriptor_csv(tmp_path, mirrored_basis):
    cloud, _, b = mirrored_basis
    kps = detect_iss_keypoints(cloud)[:5]
    idx = [k.index for k in kps]
    write_descriptor_csv(tmp_path / "d.csv", kps, compute_hks(b, idx, 4), compute_sign_vectors(b, idx, 3))
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert len(rows) == 6 and len(rows[1].split(",")) == 1 + 3 + 4 + 3
