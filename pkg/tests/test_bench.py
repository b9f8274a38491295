import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lidarfeat.bench import (
    PairEvaluation,
    aggregate,
    evaluate_pairs,
    match_inlier_ratio,
    read_pair_table,
    registration_errors,
    repeatability,
    trajectory_errors,
    write_pair_table,
)
from lidarfeat.errors import EmptySet, LengthMismatch
from lidarfeat.extract import FeatureSet
from lidarfeat.geom import Pose, RigidTransform, random_transform
from lidarfeat.register import MatchSet


def fset(points, desc=None, rng=None):
    n = len(points)
    if desc is None:
        desc = rng.normal(size=(n, 8))
        desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return FeatureSet(np.zeros((n, 2)), points, np.ones(n), desc)


def brute_repeatability(a, b, T, tau):
    hits = 0
    for p in a.points:
        q = T.rotation @ p + T.translation
        if min(np.sqrt(((q - r) ** 2).sum()) for r in b.points) <= tau:
            hits += 1
    return min(1.0, hits / min(len(a), len(b)))


def constructed_pair(rng):
    T = random_transform(rng, 5.0)
    pa = rng.uniform(-10, 10, (int(rng.integers(10, 40)), 3))
    near = T.apply(pa) + rng.normal(0, 0.2, pa.shape)
    extra = rng.uniform(-10, 10, (int(rng.integers(0, 15)), 3))
    pb = np.concatenate([near, extra])[rng.permutation(len(near) + len(extra))]
    return fset(pa, rng=rng), fset(pb, rng=rng), T


def test_repeatability_oracle(rng):
    for _ in range(20):
        a, b, T = constructed_pair(rng)
        assert abs(repeatability(a, b, T, 0.3) - brute_repeatability(a, b, T, 0.3)) < 1e-9


def test_inlier_ratio_oracle(rng):
    for _ in range(20):
        a, b, T = constructed_pair(rng)
        k = min(len(a), len(b))
        m = MatchSet(rng.permutation(len(a))[:k], rng.permutation(len(b))[:k], np.zeros(k))
        got, empty = match_inlier_ratio(m, a, b, T, 0.3)
        ref = np.mean([np.linalg.norm(T.rotation @ a.points[i] + T.translation - b.points[j]) < 0.3
                       for i, j in zip(m.idx_a, m.idx_b)])
        assert not empty and abs(got - ref) < 1e-9
    assert match_inlier_ratio(MatchSet(np.zeros(0, int), np.zeros(0, int), np.zeros(0)), a, b, T) == (0.0, True)


def test_registration_errors(rng):
    T = random_transform(rng)
    E = RigidTransform.from_rotvec(np.deg2rad([0, 0, 2.0]), [0.3, 0.4, 0])
    t, r = registration_errors(T @ E, T)
    assert t == pytest.approx(0.5) and r == pytest.approx(2.0)


def test_empty_sets_raise(rng):
    a, b, T = constructed_pair(rng)
    with pytest.raises(EmptySet):
        repeatability(FeatureSet.empty(8), b, T)


def test_identity_manifest_is_perfect(rng):
    feats = {k: fset(rng.uniform(-20, 20, (60, 3)), rng=rng) for k in range(5)}
    manifest = [(k, k, RigidTransform.identity()) for k in range(5)]
    rep = evaluate_pairs(manifest, feats, seed=0)
    assert rep.summary()["RS"] == 100.0 and rep.MR == 100.0 and rep.RR == 100.0


def test_rs_monotone_in_tau1(rng):
    pairs = []
    for n in range(6):
        a, b, T = constructed_pair(rng)
        feats = {0: a, 1: b}
        pairs += evaluate_pairs([(0, 1, T)], feats, seed=n).pairs
    rep = type(evaluate_pairs([(0, 1, T)], feats))(pairs, {"tau1": 0.3, "tau2": 0.2, "tau3": 0.3})
    curve = [v for _, v in rep.sweeps(tau1_values=np.linspace(0.05, 1.0, 10))["RS"]]
    assert all(b >= a for a, b in zip(curve, curve[1:]))


def test_failed_pairs_count_as_misses(rng):
    feats = {0: fset(rng.uniform(-5, 5, (2, 3)), rng=rng), 1: fset(rng.uniform(-5, 5, (2, 3)), rng=rng)}
    rep = evaluate_pairs([(0, 1, RigidTransform.identity())], feats)
    assert rep.pairs[0].status.startswith("TooFewMatches")
    assert rep.RR == 0.0 and rep.summary()["failed"] == 1


def test_aggregate_thresholds():
    rows = [PairEvaluation(0, 1, repeatability=0.5, inlier_match_ratio=0.2, registration_translation_error=0.1),
            PairEvaluation(1, 2, repeatability=0.3, inlier_match_ratio=0.25, registration_translation_error=0.3)]
    s = aggregate(rows, 0.3, 0.2, 0.3)
    assert s["RS"] == pytest.approx(40.0) and s["MR"] == 50.0 and s["RR"] == 50.0


def test_pair_table_round_trip(tmp_path):
    rows = [PairEvaluation(0, 1, 5, 6, 3, 0.125, 0.5, 0.01, 0.2),
            PairEvaluation(2, 3, status="Degenerate: x")]
    write_pair_table(tmp_path / "p.csv", rows)
    back = read_pair_table(tmp_path / "p.csv")
    assert [r.row() for r in back] == [r.row() for r in rows]


def brute_trajectory_errors(est, gt):
    pe = np.array([T.translation for T in est])
    pg = np.array([T.translation for T in gt])
    ce, cg = pe.mean(0), pg.mean(0)
    rot, _ = Rotation.align_vectors(pg - cg, pe - ce)
    R = rot.as_matrix()
    t_err, r_err = [], []
    for E, G in zip(est, gt):
        p = R @ E.translation + cg - R @ ce
        t_err.append(np.linalg.norm(p - G.translation))
        r_err.append(Rotation.from_matrix(G.rotation.T @ R @ E.rotation).magnitude())
    return np.mean(t_err), np.degrees(np.mean(r_err))


def test_trajectory_errors_oracle(rng):
    for _ in range(20):
        gt = [random_transform(rng, 10.0) for _ in range(8)]
        est = [T @ RigidTransform.from_rotvec(rng.normal(0, 0.05, 3), rng.normal(0, 0.3, 3)) for T in gt]
        G = random_transform(rng, 50.0)
        est = [G @ T for T in est]
        got = trajectory_errors([Pose(T, 0.0) for T in est], gt)
        ref = brute_trajectory_errors(est, gt)
        np.testing.assert_allclose(got, ref, atol=1e-9)


def test_trajectory_length_mismatch(rng):
    with pytest.raises(LengthMismatch):
        trajectory_errors([RigidTransform.identity()] * 3, [RigidTransform.identity()] * 4)
