"""Sparse 3D keypoints from dense score and descriptor maps."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import FormatError, ShapeMismatch
from .geom import OrderedPointCloud

DEFAULT_SCORE_THRESHOLD = 0.7
DEFAULT_NMS_RADIUS = 8


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Index-aligned keypoints: pixels ``(n, 2)`` as (u, v), points ``(n, 3)``,
    scores ``(n,)`` and unit descriptors ``(n, d)``."""

    pixels: np.ndarray
    points: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        n = len(self.scores)
        px = np.asarray(self.pixels, dtype=np.int64).reshape(n, 2)
        pts = np.asarray(self.points, dtype=np.float64).reshape(n, 3)
        sc = np.asarray(self.scores, dtype=np.float64).reshape(n)
        de = np.asarray(self.descriptors, dtype=np.float64)
        if de.ndim != 2 or de.shape[0] != n:
            raise ValueError("descriptors must be (n, d) aligned with scores")
        for name, arr in (("pixels", px), ("points", pts), ("scores", sc), ("descriptors", de)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.scores.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @classmethod
    def empty(cls, d=32) -> "FeatureSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, d)))

    def top(self, k) -> "FeatureSet":
        """First ``k`` keypoints (the highest scoring, since sets are sorted)."""
        return self.subset(np.arange(min(k, len(self))))

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(self.pixels[idx], self.points[idx], self.scores[idx], self.descriptors[idx])


def fuse_scores(maps) -> np.ndarray:
    """Keypoint score: reliability times repeatability."""
    return np.asarray(maps.reliability) * np.asarray(maps.repeatability)


def extract(maps, cloud: OrderedPointCloud, score_threshold=DEFAULT_SCORE_THRESHOLD,
            nms_radius=DEFAULT_NMS_RADIUS) -> FeatureSet:
    """Threshold, suppress and lift keypoints.

    A pixel survives when its fused score exceeds the threshold and no
    candidate that ranks higher lies within ``nms_radius`` (square window,
    columns wrap). Equal scores rank by lower row, then lower column.
    Survivors on invalid cloud cells are dropped; output is sorted by
    descending score.
    """
    S = fuse_scores(maps)
    if S.shape != cloud.shape:
        raise ShapeMismatch(f"score map {S.shape} vs cloud {cloud.shape}")
    keep = _kernels.nms_mask(np.ascontiguousarray(S, dtype=np.float64), float(score_threshold),
                             int(nms_radius))
    keep &= cloud.valid
    rows, cols = np.nonzero(keep)
    scores = S[rows, cols]
    order = np.lexsort((cols, rows, -scores))
    rows, cols, scores = rows[order], cols[order], scores[order]
    desc = np.asarray(maps.descriptors)[rows, cols]
    return FeatureSet(np.stack([cols, rows], axis=1), cloud.points[rows, cols], scores, desc)


# --- feature files -----------------------------------------------------------

_MAGIC = b"F3DL"


def write_features(path, fs: FeatureSet) -> None:
    n, d = len(fs), fs.dim
    rec = np.dtype([("u", "<u4"), ("v", "<u4"), ("p", "<f4", 3), ("s", "<f4"), ("x", "<f4", d)])
    arr = np.zeros(n, dtype=rec)
    arr["u"], arr["v"] = fs.pixels[:, 0], fs.pixels[:, 1]
    arr["p"], arr["s"], arr["x"] = fs.points, fs.scores, fs.descriptors
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", n, d))
        f.write(arr.tobytes())


def read_features(path) -> FeatureSet:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a feature file")
    n, d = struct.unpack("<II", data[4:12])
    rec = np.dtype([("u", "<u4"), ("v", "<u4"), ("p", "<f4", 3), ("s", "<f4"), ("x", "<f4", d)])
    if len(data) != 12 + n * rec.itemsize:
        raise FormatError(f"{path}: expected {n} records of {rec.itemsize} bytes")
    arr = np.frombuffer(data, rec, n, 12)
    desc = arr["x"].astype(np.float64).reshape(n, d)
    # stored as float32; renormalise so the unit-norm invariant survives the round trip
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    desc = np.where(norms > 0, desc / np.where(norms > 0, norms, 1.0), desc)
    return FeatureSet(np.stack([arr["u"], arr["v"]], axis=1), arr["p"], arr["s"], desc)
