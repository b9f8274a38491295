import numpy as np
import pytest
from scipy.spatial.distance import cdist

from lidarfeat import simlidar
from lidarfeat.errors import Degenerate, EmptySet, NoCorrespondences, TooFewMatches
from lidarfeat.extract import FeatureSet
from lidarfeat.geom import RigidTransform, random_transform, rotation_angle
from lidarfeat.register import MatchSet, RegistrationResult, estimate_rigid, match, procrustes, refine_icp


def fset(points, desc):
    n = len(points)
    return FeatureSet(np.zeros((n, 2)), points, np.ones(n), desc)


def unit(rng, n, d=16):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_procrustes_exact(rng):
    for _ in range(50):
        T = random_transform(rng)
        src = rng.normal(size=(20, 3)) * 5
        est = procrustes(src, T.apply(src))
        np.testing.assert_allclose(est.matrix(), T.matrix(), atol=1e-9)


def test_procrustes_never_reflects(rng):
    src = rng.normal(size=(10, 3))
    dst = src * np.array([1, 1, -1])  # mirror image
    T = procrustes(src, dst)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0)


def test_match_is_mutual_nearest(rng):
    a, b = fset(rng.normal(size=(40, 3)), unit(rng, 40)), fset(rng.normal(size=(55, 3)), unit(rng, 55))
    m = match(a, b)
    D = cdist(a.descriptors, b.descriptors)
    expect = [(i, j) for i in range(40) for j in range(55) if D[i].argmin() == j and D[:, j].argmin() == i]
    assert list(zip(m.idx_a.tolist(), m.idx_b.tolist())) == expect
    np.testing.assert_allclose(m.distance, D[m.idx_a, m.idx_b])
    mr = match(a, b, ratio=0.9)
    assert set(zip(mr.idx_a.tolist(), mr.idx_b.tolist())) <= set(expect)


def test_match_empty_raises(rng):
    with pytest.raises(EmptySet):
        match(FeatureSet.empty(16), fset(rng.normal(size=(3, 3)), unit(rng, 3)))


def corrupted_pair(rng, n=100, outlier_frac=0.3, noise=0.01):
    pts = rng.uniform(-15, 15, (n, 3))
    T = random_transform(rng, 5.0)
    tgt = T.apply(pts) + rng.normal(0, noise, (n, 3))
    bad = rng.choice(n, int(outlier_frac * n), replace=False)
    tgt[bad] = rng.uniform(-15, 15, (len(bad), 3))
    desc = unit(rng, n)
    return fset(pts, desc), fset(tgt, desc), T


def test_ransac_rejects_outliers(rng):
    a, b, T = corrupted_pair(rng)
    m = match(a, b)
    res = estimate_rigid(m, a, b, 0.3, 1000, seed=1)
    E = T.inverse() @ res.transform
    assert np.linalg.norm(E.translation) < 0.05
    assert np.degrees(rotation_angle(E.rotation)) < 1.0
    assert res.converged and res.inlier_count >= 65 and res.n_matches == 100


def test_ransac_deterministic(rng):
    a, b, _ = corrupted_pair(rng, outlier_frac=0.6)
    m = match(a, b)
    r1, r2 = estimate_rigid(m, a, b, seed=5), estimate_rigid(m, a, b, seed=5)
    np.testing.assert_array_equal(r1.transform.matrix(), r2.transform.matrix())
    np.testing.assert_array_equal(r1.inlier_indices, r2.inlier_indices)


def test_ransac_failure_modes(rng):
    a = fset(rng.normal(size=(2, 3)), unit(rng, 2))
    with pytest.raises(TooFewMatches):
        estimate_rigid(match(a, a), a, a)
    line = np.outer(np.arange(6.0), [1.0, 2.0, 3.0])
    c = fset(line, unit(rng, 6))
    with pytest.raises(Degenerate):
        estimate_rigid(match(c, c), c, c, iterations=50)


@pytest.fixture(scope="module")
def cloud_pair():
    scene = simlidar.demo_scene(seed=3, room_texture="plain")
    spec = simlidar.ScannerSpec.uniform(32, 512, 15.0, max_range=60.0)
    pa, pb = simlidar.waypoint(0, 0, 0, 0), simlidar.waypoint(0.8, 0.3, 0, 6)
    return (simlidar.raycast(scene, pa, spec, 1), simlidar.raycast(scene, pb, spec, 2),
            pb.transform.inverse() @ pa.transform)


def test_icp_residuals_non_increasing(cloud_pair):
    a, b, T = cloud_pair
    start = RigidTransform.from_rotvec([0, 0, 0.03], [0.15, -0.1, 0.02]) @ T
    res = refine_icp(RegistrationResult(start, 10, np.arange(10), True), a.valid_points()[::3], b, 30, 1.0)
    assert len(res.residuals) >= 2
    assert all(x >= y for x, y in zip(res.residuals, res.residuals[1:]))
    E0 = T.inverse() @ start
    E = T.inverse() @ res.transform
    assert np.linalg.norm(E.translation) < np.linalg.norm(E0.translation)


def test_icp_without_neighbours(cloud_pair):
    a, b, _ = cloud_pair
    far = RigidTransform.from_rotvec([0, 0, 0], [1000, 0, 0])
    with pytest.raises(NoCorrespondences):
        refine_icp(RegistrationResult(far, 3, np.arange(3), True), a, b, 5, 0.5)


def test_matchset_pairs():
    m = MatchSet(np.array([0, 2]), np.array([1, 3]), np.array([0.5, 0.25]))
    assert m.pairs() == [(0, 1, 0.5), (2, 3, 0.25)]
    assert len(m) == 2
