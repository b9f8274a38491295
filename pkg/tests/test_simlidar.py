import json

import numpy as np
import pytest

from lidarfeat import simlidar
from lidarfeat.geom import RigidTransform, relative_transform
from lidarfeat.projection import lift_image, to_scan_image
from lidarfeat.simlidar import Primitive, Scene, ScannerSpec


def big_plane(z=-1.0):
    return Primitive("plane", RigidTransform(np.eye(3), (0, 0, z)), (1e4, 1e4), 0.5)


def test_plane_ranges_analytic():
    spec = ScannerSpec.uniform(9, 32, 30.0)
    cloud = simlidar.raycast(Scene([big_plane()]), simlidar.waypoint(0, 0), spec, 0)
    for i, e in enumerate(spec.elevation):
        if e < -1e-9:
            assert cloud.valid[i].all()
            np.testing.assert_allclose(np.linalg.norm(cloud.points[i], axis=1), -1.0 / np.sin(e), rtol=0, atol=1e-9)
        else:
            assert not cloud.valid[i].any()


def test_plane_ranges_with_noise():
    sigma = 0.02
    spec = ScannerSpec.uniform(9, 32, 30.0, range_noise_sigma=sigma)
    cloud = simlidar.raycast(Scene([big_plane()]), simlidar.waypoint(0, 0), spec, 7)
    rows = spec.elevation < 0
    expect = (-1.0 / np.sin(spec.elevation[rows]))[:, None]
    err = np.linalg.norm(cloud.points[rows], axis=2) - expect
    assert np.all(np.abs(err) < 5 * sigma)
    assert 0.5 * sigma < err.std() < 1.5 * sigma


def test_empty_scene():
    spec = ScannerSpec.uniform(4, 16, 10.0)
    assert not simlidar.raycast(Scene([]), simlidar.waypoint(0, 0), spec).valid.any()


def test_sphere_ahead():
    sigma = 0.01
    spec = ScannerSpec.uniform(5, 64, 10.0, range_noise_sigma=sigma)
    s = Primitive("sphere", RigidTransform(np.eye(3), (5, 0, 0)), (1.0,), 0.7)
    cloud = simlidar.raycast(Scene([s]), simlidar.waypoint(0, 0), spec, 3)
    assert abs(np.linalg.norm(cloud.points[2, 0]) - 4.0) < 3 * sigma
    assert cloud.intensities[2, 0] == pytest.approx(0.7)


def test_inside_box_and_cylinder_hit_inner_walls():
    spec = ScannerSpec(1, 64, [0.0])
    room = Primitive("box", RigidTransform(np.eye(3), (0, 0, 0)), (4.0, 6.0, 3.0), 0.4)
    cloud = simlidar.raycast(Scene([room]), simlidar.waypoint(0, 0), spec)
    az = spec.model.column_azimuths()
    r = np.linalg.norm(cloud.points[0], axis=1)
    with np.errstate(divide="ignore"):
        expect = np.minimum(np.abs(4.0 / np.cos(az)), np.abs(6.0 / np.sin(az)))
    np.testing.assert_allclose(r, expect, atol=1e-9)
    cyl = Primitive("cylinder", RigidTransform(np.eye(3), (0, 0, 0)), (3.0, 2.0), 0.4)
    cloud = simlidar.raycast(Scene([cyl]), simlidar.waypoint(0, 0), spec)
    np.testing.assert_allclose(np.linalg.norm(cloud.points[0], axis=1), 3.0, atol=1e-9)


def test_cylinder_outside_and_caps():
    spec = ScannerSpec(3, 32, [np.pi / 2 - 1e-3, 0.0, -np.pi / 2 + 1e-3])
    cyl = Primitive("cylinder", RigidTransform(np.eye(3), (0, 0, 5.0)), (1.0, 1.0), 0.4)
    cloud = simlidar.raycast(Scene([cyl]), simlidar.waypoint(0, 0), spec)
    # straight up hits the bottom cap at z=4
    assert np.linalg.norm(cloud.points[0, 0]) == pytest.approx(4.0 / np.sin(np.pi / 2 - 1e-3), abs=1e-9)
    assert not cloud.valid[1].any()


def test_dropout_and_max_range():
    spec = ScannerSpec.uniform(32, 128, 20.0, dropout_rate=0.1, max_range=1000)
    room = Primitive("box", RigidTransform(np.eye(3), (0, 0, 0)), (10.0, 10.0, 10.0), 0.4)
    cloud = simlidar.raycast(Scene([room]), simlidar.waypoint(0, 0), spec, 1)
    assert 0.07 < 1 - cloud.valid.mean() < 0.13
    near = ScannerSpec.uniform(32, 128, 20.0, max_range=11.0)
    c2 = simlidar.raycast(Scene([room]), simlidar.waypoint(0, 0), near)
    assert np.all(np.linalg.norm(c2.valid_points(), axis=1) <= 11.0)
    assert 0 < c2.valid.mean() < 1


def test_raycast_deterministic(scene, small_spec):
    spec = ScannerSpec.uniform(16, 256, 15.0, range_noise_sigma=0.02, dropout_rate=0.05)
    a = simlidar.raycast(scene, simlidar.waypoint(1, 1), spec, 9)
    b = simlidar.raycast(scene, simlidar.waypoint(1, 1), spec, 9)
    c = simlidar.raycast(scene, simlidar.waypoint(1, 1), spec, 10)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.valid, b.valid)
    assert not np.array_equal(a.points, c.points)


def test_textures_give_intensity_structure(scene, small_spec):
    cloud = simlidar.raycast(scene, simlidar.waypoint(0, 0), small_spec)
    vals = cloud.intensities[cloud.valid]
    assert vals.min() >= 0 and vals.max() <= 1
    assert np.unique(np.round(vals, 3)).size > 20


def test_lift_consistency(scene, small_spec):
    cloud = simlidar.raycast(scene, simlidar.waypoint(2, -1, 0, 200), small_spec, 4)
    back = lift_image(to_scan_image(cloud), small_spec.model)
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)


def test_trajectory_constant():
    wp = simlidar.waypoint(1, 2, 3, 45)
    poses = simlidar.interpolate_poses([wp, wp], 5)
    for p in poses:
        assert p.transform.allclose(wp.transform, 1e-12)


def test_trajectory_corridor_steps():
    a, b = simlidar.waypoint(0, 0), simlidar.waypoint(10, 0)
    poses = simlidar.interpolate_poses([a, b], 21)
    for p, q in zip(poses, poses[1:]):
        T = relative_transform(q, p)  # maps q's frame into p's
        np.testing.assert_allclose(T.translation, [0.5, 0, 0], atol=1e-9)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-9)


def test_square_loop_closes():
    poses = simlidar.square_loop(side=10, steps=41)
    assert poses[0].transform.allclose(poses[-1].transform, 1e-9)
    np.testing.assert_allclose(poses[10].position, [10, 0, 0], atol=1e-12)


def test_generate_trajectory(scene, small_spec):
    wps = [simlidar.waypoint(0, 0), simlidar.waypoint(2, 0)]
    out = simlidar.generate_trajectory(scene, small_spec, wps, 3, seed=1)
    assert len(out) == 3
    pose, cloud = out[1]
    np.testing.assert_allclose(pose.position, [1, 0, 0])
    assert cloud.valid.any()


def test_scene_json_roundtrip(tmp_path, scene):
    path = tmp_path / "scene.json"
    path.write_text(simlidar.scene_to_json(scene))
    back = simlidar.load_scene(path)
    assert len(back.primitives) == len(scene.primitives)
    spec = ScannerSpec.uniform(8, 64, 15.0)
    a = simlidar.raycast(scene, simlidar.waypoint(0, 0), spec)
    b = simlidar.raycast(back, simlidar.waypoint(0, 0), spec)
    np.testing.assert_allclose(a.points, b.points, atol=1e-9)


def test_waypoint_file(tmp_path):
    path = tmp_path / "traj.json"
    path.write_text(json.dumps({"waypoints": [{"position": [0, 0, 0]}, {"position": [1, 0, 0], "yaw_deg": 90}], "steps": 4}))
    wps, steps, dt = simlidar.load_waypoints(path)
    assert steps == 4 and dt == 0.1 and len(wps) == 2


def test_bad_primitives():
    with pytest.raises(ValueError):
        Primitive("cone", RigidTransform.identity(), (1,))
    with pytest.raises(ValueError):
        Primitive("sphere", RigidTransform.identity(), (-1,))
    with pytest.raises(ValueError):
        Primitive("sphere", RigidTransform.identity(), (1,), reflectivity=2)
    with pytest.raises(ValueError):
        ScannerSpec.uniform(4, 16, 10.0, dropout_rate=1.0)


def test_presets():
    s = ScannerSpec.preset("os1-64")
    assert (s.height, s.width) == (64, 1024)
    assert s.elevation[0] == pytest.approx(np.deg2rad(16.6))
    s = ScannerSpec.preset("os0-128")
    assert (s.height, s.width) == (128, 1024)
    assert s.elevation[-1] == pytest.approx(np.deg2rad(-45))
