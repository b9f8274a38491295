"""Rigid-body math, poses and ordered pointclouds.

Conventions: column vectors, ``p' = R @ p + t``. Poses map scanner coordinates
into the world frame. Rotations are stored as 3x3 matrices; quaternions
(x, y, z, w order) only appear when reading or writing files.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import FormatError


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(so3_exp(rotvec), translation)

    @classmethod
    def from_quaternion(cls, q_xyzw, translation) -> "RigidTransform":
        R = Rotation.from_quat(np.asarray(q_xyzw, dtype=np.float64)).as_matrix()
        return cls(R, translation)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def matrix3x4(self) -> np.ndarray:
        return self.matrix()[:3]

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return inverse(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        rv = so3_log(self.rotation)
        return f"RigidTransform(rotvec={np.round(rv, 6)}, t={np.round(self.translation, 6)})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


@dataclass(frozen=True, eq=False)
class Pose:
    transform: RigidTransform
    timestamp: float = 0.0

    def __post_init__(self):
        ts = float(self.timestamp)
        if not np.isfinite(ts) or ts < 0:
            raise ValueError(f"timestamp must be finite and nonnegative, got {ts}")
        object.__setattr__(self, "timestamp", ts)

    @property
    def position(self) -> np.ndarray:
        return self.transform.translation


def relative_transform(src: Pose, dst: Pose) -> RigidTransform:
    """Transform taking points in ``src``'s scanner frame into ``dst``'s frame."""
    return compose(inverse(dst.transform), src.transform)


@dataclass(frozen=True, eq=False)
class OrderedPointCloud:
    """H x W grid of scanner-frame points with intensities and a validity mask.

    Cells that are invalid, non-finite or at zero range are normalised to a
    zero point with zero intensity and a false mask entry.
    """

    points: np.ndarray
    intensities: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        inten = np.array(self.intensities, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"points must be HxWx3, got {pts.shape}")
        if inten.shape != pts.shape[:2] or valid.shape != pts.shape[:2]:
            raise ValueError("intensities/valid must match the point grid")
        with np.errstate(invalid="ignore"):
            rng = np.linalg.norm(pts, axis=2)
        valid &= np.all(np.isfinite(pts), axis=2) & np.isfinite(inten) & (rng > 0)
        pts[~valid] = 0.0
        inten[~valid] = 0.0
        for name, arr in (("points", pts), ("intensities", inten), ("valid", valid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self):
        return self.points.shape[:2]

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    @classmethod
    def empty(cls, H: int, W: int) -> "OrderedPointCloud":
        return cls(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W), bool))


def transform_cloud(cloud: OrderedPointCloud, T: RigidTransform) -> OrderedPointCloud:
    pts = T.apply(cloud.points)
    pts[~cloud.valid] = 0.0
    return OrderedPointCloud(pts, cloud.intensities, cloud.valid)


# --- SO(3) / SE(3) helpers -------------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(rotvec) -> np.ndarray:
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor; exact to machine precision at this size
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * vee * (1.0 + theta**2 / 6.0)
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        return Rotation.from_matrix(R).as_rotvec()
    return theta / (2.0 * np.sin(theta)) * vee


def rotation_angle(R) -> float:
    """Rotation angle in radians, accurate for small angles."""
    return float(np.linalg.norm(so3_log(R)))


def _left_jacobian(w):
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta**2 * K
        + (theta - np.sin(theta)) / theta**3 * K @ K
    )


def se3_log(T: RigidTransform) -> np.ndarray:
    """6-vector (rotation vector, translation part) of the SE(3) logarithm."""
    w = so3_log(T.rotation)
    rho = np.linalg.solve(_left_jacobian(w), T.translation)
    return np.concatenate([w, rho])


def se3_exp(xi) -> RigidTransform:
    xi = np.asarray(xi, dtype=np.float64)
    w, rho = xi[:3], xi[3:]
    return RigidTransform(so3_exp(w), _left_jacobian(w) @ rho)


def random_transform(rng: np.random.Generator, max_translation: float = 10.0) -> RigidTransform:
    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(R, rng.uniform(-max_translation, max_translation, 3))


# --- TUM trajectory files ---------------------------------------------------


def write_poses(path, poses) -> None:
    lines = []
    for p in poses:
        t = p.transform.translation
        q = p.transform.quaternion()
        vals = [p.timestamp, *t, *q]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_poses(path) -> list[Pose]:
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        v = [float(x) for x in parts]
        T = RigidTransform.from_quaternion(v[4:8], v[1:4])
        poses.append(Pose(T, v[0]))
    return poses
