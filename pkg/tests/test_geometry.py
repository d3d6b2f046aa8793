import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symplane.geometry import (
    CorrespondenceSet,
    PointCloud,
    RigidNormalization,
    SymmetryPlane,
    bbox_diagonal,
    canonical_sign,
    knn_query,
    normalize_cloud,
    plane_from_points,
    plane_points,
    reflect_cloud,
    reflect_point,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
nonzero_vec3 = vec3.filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_reflect_axis():
    p = SymmetryPlane([1, 0, 0], 0.0)
    assert np.array_equal(reflect_point([1.0, 0, 0], p), [-1.0, 0, 0])


def test_reflect_fixed_points():
    p = SymmetryPlane([1, 2, 2], 3.0)
    x = p.project(np.array([0.3, -4.0, 7.0]))
    assert np.allclose(reflect_point(x, p), x, atol=1e-12)


def test_reflect_formula_matches_householder(rng):
    p = SymmetryPlane(rng.normal(size=3), 0.7)
    x = rng.normal(size=3)
    expect = p.householder() @ x + 2 * p.offset * p.normal
    assert np.allclose(reflect_point(x, p), expect, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(vec3, nonzero_vec3, finite)
def test_reflection_involution(x, v, w):
    p = SymmetryPlane(v, w)
    assert np.allclose(reflect_point(reflect_point(x, p), p), x, atol=1e-12 * (1 + np.abs(x).max() + abs(w)))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, nonzero_vec3, finite)
def test_reflection_isometry(x, y, v, w):
    p = SymmetryPlane(v, w)
    d0 = np.linalg.norm(x - y)
    d1 = np.linalg.norm(reflect_point(x, p) - reflect_point(y, p))
    assert abs(d0 - d1) <= 1e-12 * (1 + np.abs(x).max() + np.abs(y).max() + abs(w)) * 10


@settings(max_examples=200, deadline=None)
@given(nonzero_vec3, finite)
def test_canonical_plane_sign_flip_invariant(v, w):
    a = SymmetryPlane(v, w)
    b = SymmetryPlane(-v, -w)
    assert a.same_as(b, atol=1e-12)
    assert abs(np.linalg.norm(a.normal) - 1) < 1e-12
    # idempotent
    assert SymmetryPlane(a.normal, a.offset).same_as(a, atol=1e-15 * (1 + abs(w)))
    assert canonical_sign(a.normal) == 1.0


def test_canonical_sign_skips_zero_components():
    p = SymmetryPlane([0, -1, 1], -2.0)
    assert p.normal[1] > 0 and p.offset > 0


def test_reflect_cloud_single_point():
    c = reflect_cloud(PointCloud([[1, 0, 0]]), SymmetryPlane([1, 0, 0], 0))
    assert np.array_equal(c.points, [[-1.0, 0, 0]])


def test_reflect_cloud_twice_exact(rng):
    c = PointCloud(rng.normal(size=(50, 3)))
    p = SymmetryPlane([1, 0, 0], 0.25)
    back = reflect_cloud(reflect_cloud(c, p), p)
    assert np.allclose(back.points, c.points, atol=1e-15)


def test_reflect_cloud_empty():
    with pytest.raises(ValueError):
        reflect_cloud(PointCloud(np.zeros((0, 3))), SymmetryPlane([1, 0, 0], 0))


def test_half_sphere_union_closes(rng):
    u = rng.normal(size=(400, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    u[:, 0] = np.abs(u[:, 0])
    half = PointCloud(u)
    p = SymmetryPlane([1, 0, 0], 0.0)
    union = PointCloud(np.vstack([half.points, reflect_cloud(half, p).points]))
    d, _ = union.tree.query(reflect_point(union.points, p))
    assert np.mean(d**2) < 1e-9


def test_normalize_diag_and_centroid(rng):
    pts = rng.uniform(size=(100, 3))
    pts = pts / bbox_diagonal(pts) * 10
    nc, tf = normalize_cloud(PointCloud(pts))
    assert abs(bbox_diagonal(nc.points) - 1) < 1e-12
    assert np.allclose(nc.centroid, 0, atol=1e-14)
    assert np.allclose(tf.invert(tf.apply(pts)), pts, atol=1e-12)


def test_normalize_identity_on_normalized(rng):
    nc, _ = normalize_cloud(PointCloud(rng.normal(size=(60, 3))))
    nc2, tf = normalize_cloud(nc)
    assert abs(tf.scale - 1) < 1e-12 and np.allclose(tf.centroid, 0, atol=1e-12)
    assert np.allclose(nc2.points, nc.points, atol=1e-12)


def test_normalize_degenerate():
    with pytest.raises(ValueError):
        normalize_cloud(PointCloud(np.ones((5, 3))))


@settings(max_examples=100, deadline=None)
@given(nonzero_vec3, finite, vec3, st.floats(0.01, 100))
def test_plane_roundtrip(v, w, c, s):
    tf = RigidNormalization(c, s)
    p = SymmetryPlane(v, w)
    q = tf.plane_inverse(tf.plane_forward(p))
    assert np.allclose(q.normal, p.normal, atol=1e-12) and abs(q.offset - p.offset) < 1e-10 * (1 + abs(w) + np.abs(c).max())


def test_plane_forward_formula():
    tf = RigidNormalization([1.0, 2.0, 3.0], 0.5)
    p = SymmetryPlane([0, 0, 1], 5.0)
    assert abs(tf.plane_forward(p).offset - (5 - 3) * 0.5) < 1e-15


def test_knn_collinear_self():
    c = PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert knn_query(c, [0, 0, 0], 1) == [(0, 0.0)]


def test_knn_full_sorted():
    c = PointCloud([[3, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert [i for i, _ in knn_query(c, [0, 0, 0], 3)] == [1, 2, 0]


def test_knn_ties_by_index():
    c = PointCloud([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 5]])
    assert [i for i, _ in knn_query(c, [0, 0, 0], 3)] == [0, 1, 2]


def test_knn_range():
    c = PointCloud([[0, 0, 0]])
    with pytest.raises(ValueError):
        knn_query(c, [0, 0, 0], 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.integers(0, 2**31), st.integers(1, 20))
def test_knn_matches_bruteforce(n, seed, k):
    rng = np.random.default_rng(seed)
    # coarse grid coordinates force plenty of distance ties
    pts = rng.integers(0, 4, size=(n, 3)).astype(float)
    q = rng.integers(0, 4, size=3).astype(float)
    k = min(k, n)
    d = np.linalg.norm(pts - q, axis=1)
    expect = np.lexsort((np.arange(n), d))[:k]
    got = knn_query(PointCloud(pts), q, k)
    assert [i for i, _ in got] == expect.tolist()


def test_pointcloud_invariants():
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], labels=[0, 1])


def test_correspondence_invariants():
    c = CorrespondenceSet([[3, 1], [0, 2]])
    assert c.as_set() == {(1, 3), (0, 2)}
    with pytest.raises(ValueError):
        CorrespondenceSet([[1, 1]])
    with pytest.raises(ValueError):
        CorrespondenceSet([[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        CorrespondenceSet([[0, 1], [1, 2]])


def test_plane_points_on_plane(rng):
    p = SymmetryPlane(rng.normal(size=3), 0.3)
    Q = plane_points(p, rng.normal(size=3), 0.5)
    assert np.allclose(p.signed_distance(Q), 0, atol=1e-12)
    assert plane_from_points(*Q).same_as(p, atol=1e-12)
