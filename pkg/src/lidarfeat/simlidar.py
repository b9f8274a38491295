"""Analytic raycaster over simple primitives, used as ground truth.

Scenes are lists of planes (finite rectangles), boxes, cylinders and spheres,
each with a local-to-world pose, a reflectivity and an optional texture.
A ray starting inside a closed primitive hits its inner surface, so a big
box works as a room.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geom import OrderedPointCloud, Pose, RigidTransform
from .projection import SphericalModel

_T_MIN = 1e-9
SHAPES = ("plane", "box", "cylinder", "sphere")


@dataclass(frozen=True, eq=False)
class Primitive:
    shape: str
    pose: RigidTransform
    size: tuple
    reflectivity: float = 0.5
    texture: dict | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        size = tuple(float(s) for s in self.size)
        need = {"plane": 2, "box": 3, "cylinder": 2, "sphere": 1}[self.shape]
        if len(size) != need or any(not s > 0 for s in size):
            raise ValueError(f"{self.shape} needs {need} positive size values, got {size}")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError("reflectivity must lie in [0, 1]")
        object.__setattr__(self, "size", size)


@dataclass
class Scene:
    primitives: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ScannerSpec:
    height: int
    width: int
    elevation: np.ndarray
    max_range: float = 100.0
    range_noise_sigma: float = 0.0
    falloff: float = 0.0
    dropout_rate: float = 0.0
    azimuth_offset: float = 0.0

    def __post_init__(self):
        elev = np.array(self.elevation, dtype=np.float64)
        object.__setattr__(self, "elevation", elev)
        if elev.size != self.height:
            raise ValueError("elevation table length must equal height")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        # constructing the model checks the remaining invariants
        self.model

    @property
    def model(self) -> SphericalModel:
        return SphericalModel(2 * np.pi / self.width, self.elevation, self.azimuth_offset)

    @classmethod
    def uniform(cls, H, W, fov_deg, **kw) -> "ScannerSpec":
        half = np.deg2rad(fov_deg)
        return cls(H, W, np.linspace(half, -half, H), **kw)

    @classmethod
    def preset(cls, name, **kw) -> "ScannerSpec":
        if name == "os1-64":
            return cls.uniform(64, 1024, 16.6, **kw)
        if name == "os0-128":
            return cls.uniform(128, 1024, 45.0, **kw)
        raise ValueError(f"unknown preset {name!r}")


# --- intersections in primitive-local coordinates ---------------------------


def _first_positive(*ts):
    best = np.full(ts[0].shape, np.inf)
    for t in ts:
        t = np.where(np.isfinite(t) & (t > _T_MIN), t, np.inf)
        best = np.minimum(best, t)
    return best


def _hit_plane(o, D, size):
    hx, hy = size
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[2] / D[:, 2]
        p = o + t[:, None] * D
    ok = (np.abs(p[:, 0]) <= hx) & (np.abs(p[:, 1]) <= hy)
    return _first_positive(np.where(ok, t, np.inf))


def _hit_sphere(o, D, size):
    (r,) = size
    b = D @ o
    c = o @ o - r * r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    s = np.where(disc >= 0, s, np.nan)
    return _first_positive(-b - s, -b + s)


def _hit_box(o, D, size):
    h = np.asarray(size)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / D
        t2 = (h - o) / D
    tn = np.nanmax(np.minimum(t1, t2), axis=1)
    tf = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = tn <= tf
    t = np.where(tn > _T_MIN, tn, tf)
    return _first_positive(np.where(hit, t, np.inf))


def _hit_cylinder(o, D, size):
    r, hh = size
    a = D[:, 0] ** 2 + D[:, 1] ** 2
    b = o[0] * D[:, 0] + o[1] * D[:, 1]
    c = o[0] ** 2 + o[1] ** 2 - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sqrt(np.where(disc >= 0, disc, np.nan))
        side = []
        for t in ((-b - s) / a, (-b + s) / a):
            z = o[2] + t * D[:, 2]
            side.append(np.where(np.abs(z) <= hh, t, np.inf))
        caps = []
        for zc in (-hh, hh):
            t = (zc - o[2]) / D[:, 2]
            x = o[0] + t * D[:, 0]
            y = o[1] + t * D[:, 1]
            caps.append(np.where(x * x + y * y <= r * r, t, np.inf))
    return _first_positive(*side, *caps)


_HIT = {"plane": _hit_plane, "sphere": _hit_sphere, "box": _hit_box, "cylinder": _hit_cylinder}


def _reflectivity(prim: Primitive, local_pts):
    base = np.full(local_pts.shape[0], prim.reflectivity)
    tex = prim.texture
    if not tex:
        return base
    kind = tex.get("type")
    if kind == "checker":
        cell = float(tex.get("cell", 1.0))
        k = np.floor(local_pts / cell).astype(np.int64).sum(axis=1)
        alt = float(tex.get("alt", 1.0 - prim.reflectivity))
        return np.where(k % 2 == 0, base, alt)
    if kind == "gradient":
        axis = int(tex.get("axis", 0))
        period = float(tex.get("period", 1.0))
        lo = float(tex.get("low", 0.0))
        hi = float(tex.get("high", 1.0))
        frac = np.mod(local_pts[:, axis] / period, 1.0)
        return lo + (hi - lo) * frac
    raise ValueError(f"unknown texture type {kind!r}")


def intersect(scene: Scene, origin, directions):
    """Nearest hit distance and reflectivity for world-frame rays.

    Returns ``(t, refl)``; ``t`` is inf where nothing is hit. Ties go to the
    earlier primitive.
    """
    D = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64)
    best_t = np.full(D.shape[0], np.inf)
    refl = np.zeros(D.shape[0])
    for prim in scene.primitives:
        Rp, tp = prim.pose.rotation, prim.pose.translation
        o_loc = Rp.T @ (origin - tp)
        D_loc = D @ Rp
        t = _HIT[prim.shape](o_loc, D_loc, prim.size)
        closer = t < best_t
        if not closer.any():
            continue
        best_t = np.where(closer, t, best_t)
        idx = np.nonzero(closer)[0]
        pts = o_loc + t[idx, None] * D_loc[idx]
        refl[idx] = _reflectivity(prim, pts)
    return best_t, refl


def raycast(scene: Scene, pose: Pose, spec: ScannerSpec, seed=0) -> OrderedPointCloud:
    """Simulate one sweep from ``pose``; points are in the scanner frame."""
    H, W = spec.height, spec.width
    dirs = spec.model.directions().reshape(-1, 3)
    world_dirs = dirs @ pose.transform.rotation.T
    t, refl = intersect(scene, pose.transform.translation, world_dirs)
    t = t.reshape(H, W)
    refl = refl.reshape(H, W)
    valid = np.isfinite(t) & (t <= spec.max_range)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((H, W)) * spec.range_noise_sigma
    drop = rng.random((H, W)) < spec.dropout_rate
    r = np.where(valid, t, 0.0)
    if spec.range_noise_sigma > 0:
        r = r + np.where(valid, noise, 0.0)
    valid &= ~drop & (r > 0)
    r = np.where(valid, r, 0.0)
    with np.errstate(divide="ignore"):
        inten = refl * np.where(valid, r, 1.0) ** (-spec.falloff)
    pts = dirs.reshape(H, W, 3) * r[..., None]
    return OrderedPointCloud(pts, np.where(valid, inten, 0.0), valid)


# --- trajectories ------------------------------------------------------------


def waypoint(x, y, z=0.0, yaw_deg=0.0, timestamp=0.0) -> Pose:
    R = Rotation.from_euler("z", yaw_deg, degrees=True).as_matrix()
    return Pose(RigidTransform(R, (x, y, z)), timestamp)


def interpolate_poses(waypoints, steps, dt=0.1) -> list[Pose]:
    """``steps`` poses spread evenly over the waypoint segments, both ends included."""
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    if steps < 2:
        raise ValueError("need at least two steps")
    nseg = len(waypoints) - 1
    out = []
    for k in range(steps):
        s = k * nseg / (steps - 1)
        seg = min(int(np.floor(s)), nseg - 1)
        f = s - seg
        a, b = waypoints[seg].transform, waypoints[seg + 1].transform
        if f == 0.0:
            T = a
        elif f == 1.0:
            T = b
        else:
            t = (1.0 - f) * a.translation + f * b.translation
            rots = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
            R = Slerp([0.0, 1.0], rots)([f]).as_matrix()[0]
            T = RigidTransform(R, t)
        out.append(Pose(T, k * dt))
    return out


def scan_seed(seed, index):
    """Per-scan seed so scans can be simulated independently and in any order."""
    return np.random.SeedSequence([int(seed), int(index)])


def generate_trajectory(scene, spec, waypoints, steps, seed=0, dt=0.1):
    poses = interpolate_poses(waypoints, steps, dt)
    return [(p, raycast(scene, p, spec, scan_seed(seed, k))) for k, p in enumerate(poses)]


def square_loop(side=10.0, steps=40, origin=(0.0, 0.0), z=0.0, dt=0.1):
    """Poses around a closed square, turning 90 degrees along each side."""
    x0, y0 = origin
    corners = [(0, 0), (side, 0), (side, side), (0, side), (0, 0)]
    wps = [waypoint(x0 + cx, y0 + cy, z, 90.0 * i) for i, (cx, cy) in enumerate(corners)]
    return interpolate_poses(wps, steps, dt)


# --- scene construction and files ---------------------------------------------


def demo_scene(seed=0, size=(40.0, 40.0, 8.0), n_objects=14, keep_clear=None,
               clearance=2.5, room_texture="gradient") -> Scene:
    """A textured room with scattered pillars, crates and balls.

    Object placement is drawn from ``seed`` and keeps a 3 m margin from the
    walls. Centre of the room is (0, 0); the floor sits at z = -2.
    ``keep_clear`` is an optional (n, 2) array of xy points (e.g. a planned
    trajectory); object centres are redrawn until they are at least
    ``clearance`` metres from all of them. ``room_texture`` is "gradient"
    (stripes along x) or "checker"; "plain" leaves the
    room untextured so only the objects carry distinctive structure.
    """
    rng = np.random.default_rng(seed)
    clear = None if keep_clear is None else np.asarray(keep_clear, dtype=np.float64).reshape(-1, 2)
    L, Wd, Hh = size
    if room_texture == "gradient":
        tex = {"type": "gradient", "axis": 0, "period": 3.7, "low": 0.15, "high": 0.85}
    elif room_texture == "checker":
        tex = {"type": "checker", "cell": 1.3, "alt": 0.8}
    elif room_texture == "plain":
        tex = None
    else:
        raise ValueError(f"unknown room texture {room_texture!r}")
    room = Primitive("box", RigidTransform(np.eye(3), (0.0, 0.0, Hh / 2 - 2.0)),
                     (L / 2, Wd / 2, Hh / 2), 0.35, tex)
    prims = [room]
    for i in range(n_objects):
        kind = ("cylinder", "box", "sphere")[i % 3]
        x = rng.uniform(-L / 2 + 3, L / 2 - 3)
        y = rng.uniform(-Wd / 2 + 3, Wd / 2 - 3)
        for _ in range(1000):
            if clear is None or np.min(np.hypot(clear[:, 0] - x, clear[:, 1] - y)) >= clearance:
                break
            x = rng.uniform(-L / 2 + 3, L / 2 - 3)
            y = rng.uniform(-Wd / 2 + 3, Wd / 2 - 3)
        yaw = rng.uniform(0, 2 * np.pi)
        R = Rotation.from_euler("z", yaw).as_matrix()
        refl = float(rng.uniform(0.2, 0.9))
        tex = None
        if rng.random() < 0.6:
            tex = {"type": "checker", "cell": float(rng.uniform(0.3, 0.8)), "alt": float(rng.uniform(0.1, 0.9))}
        if kind == "cylinder":
            r, hh = rng.uniform(0.3, 0.9), rng.uniform(1.0, 3.0)
            prims.append(Primitive(kind, RigidTransform(R, (x, y, -2.0 + hh)), (r, hh), refl, tex))
        elif kind == "box":
            h = rng.uniform(0.4, 1.5, 3)
            prims.append(Primitive(kind, RigidTransform(R, (x, y, -2.0 + h[2])), tuple(h), refl, tex))
        else:
            r = rng.uniform(0.4, 1.2)
            zc = -2.0 + r + rng.uniform(0.0, 1.5)
            prims.append(Primitive(kind, RigidTransform(R, (x, y, zc)), (r,), refl, tex))
    return Scene(prims)


def _prim_to_dict(p: Primitive) -> dict:
    d = {
        "shape": p.shape,
        "position": [float(v) for v in p.pose.translation],
        "quaternion": [float(v) for v in p.pose.quaternion()],
        "size": list(p.size),
        "reflectivity": p.reflectivity,
    }
    if p.texture:
        d["texture"] = dict(p.texture)
    return d


def _prim_from_dict(d: dict) -> Primitive:
    if "quaternion" in d:
        T = RigidTransform.from_quaternion(d["quaternion"], d.get("position", (0, 0, 0)))
    else:
        R = Rotation.from_euler("z", float(d.get("yaw_deg", 0.0)), degrees=True).as_matrix()
        T = RigidTransform(R, d.get("position", (0, 0, 0)))
    return Primitive(d["shape"], T, tuple(d["size"]), float(d.get("reflectivity", 0.5)), d.get("texture"))


def scene_to_json(scene: Scene) -> str:
    return json.dumps([_prim_to_dict(p) for p in scene.primitives], indent=2)


def load_scene(path) -> Scene:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["primitives"]
    return Scene([_prim_from_dict(d) for d in data])


def load_waypoints(path):
    """Read ``{"waypoints": [...], "steps": n, "dt": s}`` or a bare waypoint list.

    Each waypoint carries ``position`` and either ``yaw_deg`` or ``quaternion``.
    Returns ``(waypoints, steps or None, dt)``.
    """
    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        data = {"waypoints": data}
    wps = []
    for w in data["waypoints"]:
        pos = w.get("position", (0, 0, 0))
        if "quaternion" in w:
            wps.append(Pose(RigidTransform.from_quaternion(w["quaternion"], pos)))
        else:
            wps.append(waypoint(*pos, yaw_deg=float(w.get("yaw_deg", 0.0))))
    return wps, data.get("steps"), float(data.get("dt", 0.1))
