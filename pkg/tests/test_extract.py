import numpy as np
import pytest

from lidarfeat.errors import FormatError, ShapeMismatch
from lidarfeat.extract import FeatureSet, extract, fuse_scores, read_features, write_features
from lidarfeat.featnet.network import DenseFeatureMap
from lidarfeat.geom import OrderedPointCloud


def random_maps(rng, H=24, W=64, d=8):
    desc = rng.normal(size=(H, W, d))
    desc /= np.linalg.norm(desc, axis=-1, keepdims=True)
    return DenseFeatureMap(desc, rng.uniform(0.5, 1, (H, W)), rng.uniform(0, 1, (H, W)))


def random_cloud(rng, H=24, W=64, p_invalid=0.1):
    return OrderedPointCloud(rng.normal(size=(H, W, 3)) * 10, rng.uniform(size=(H, W)),
                             rng.random((H, W)) > p_invalid)


def chebyshev_wrap(p, q, W):
    du = abs(int(p[0]) - int(q[0]))
    return max(min(du, W - du), abs(int(p[1]) - int(q[1])))


def test_extract_contract(rng):
    maps, cloud = random_maps(rng), random_cloud(rng)
    fs = extract(maps, cloud, 0.3, 3)
    S = fuse_scores(maps)
    assert len(fs) > 0
    assert np.all(fs.scores > 0.3)
    assert np.all(np.diff(fs.scores) <= 0)
    u, v = fs.pixels[:, 0], fs.pixels[:, 1]
    assert np.all(cloud.valid[v, u])
    np.testing.assert_array_equal(fs.scores, S[v, u])
    np.testing.assert_array_equal(fs.points, cloud.points[v, u])
    np.testing.assert_array_equal(fs.descriptors, maps.descriptors[v, u])
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            assert chebyshev_wrap(fs.pixels[i], fs.pixels[j], 64) > 3


def test_plateau_keeps_one_pixel():
    H, W = 8, 16
    rel = np.ones((H, W))
    rep = np.zeros((H, W))
    rep[2:5, 3:6] = 0.9
    maps = DenseFeatureMap(np.ones((H, W, 1)), rel, rep)
    cloud = OrderedPointCloud(np.ones((H, W, 3)), np.zeros((H, W)), np.ones((H, W), bool))
    fs = extract(maps, cloud, 0.7, 2)
    assert fs.pixels.tolist() == [[3, 2]]  # lowest row, then lowest column


def test_threshold_is_strict():
    maps = DenseFeatureMap(np.ones((3, 9, 1)), np.ones((3, 9)), np.full((3, 9), 0.7))
    cloud = OrderedPointCloud(np.ones((3, 9, 3)), np.zeros((3, 9)), np.ones((3, 9), bool))
    assert len(extract(maps, cloud, 0.7, 1)) == 0


def test_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        extract(random_maps(rng, 8, 16), random_cloud(rng, 8, 20))


def test_feature_file_round_trip(tmp_path, rng):
    fs = extract(random_maps(rng), random_cloud(rng), 0.3, 2)
    path = tmp_path / "a.f3dl"
    write_features(path, fs)
    back = read_features(path)
    np.testing.assert_array_equal(back.pixels, fs.pixels)
    np.testing.assert_allclose(back.points, fs.points, rtol=1e-6)
    np.testing.assert_allclose(back.scores, fs.scores, rtol=1e-6)
    np.testing.assert_allclose(back.descriptors, fs.descriptors, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(back.descriptors, axis=1), 1.0, atol=1e-12)
    write_features(tmp_path / "e.f3dl", FeatureSet.empty(16))
    assert len(read_features(tmp_path / "e.f3dl")) == 0
    (tmp_path / "t.f3dl").write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_features(tmp_path / "t.f3dl")
    (tmp_path / "m.f3dl").write_bytes(b"ABCD" + path.read_bytes()[4:])
    with pytest.raises(FormatError):
        read_features(tmp_path / "m.f3dl")


def test_top_and_subset(rng):
    fs = extract(random_maps(rng), random_cloud(rng), 0.2, 2)
    assert len(fs.top(5)) == 5
    np.testing.assert_array_equal(fs.top(5).scores, fs.scores[:5])
    assert len(fs.top(10_000)) == len(fs)
    sub = fs.subset([2, 0])
    np.testing.assert_array_equal(sub.points, fs.points[[2, 0]])
    with pytest.raises(ValueError):
        FeatureSet(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros(2), np.zeros((3, 4)))
