"""Training and evaluation pairs: synthetic warps and posed real scans.

A :class:`FlowMap` stores, for every pixel (u, v) of the first image, the
real-valued location (u', v') of the same surface point in the second image.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import EmptyCloud, FormatError
from .geom import OrderedPointCloud, RigidTransform, relative_transform
from .projection import (
    ScanImage,
    SphericalModel,
    continuous_coords,
    pixel_of,
    read_scan_raw,
    write_container,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FlowMap:
    target: np.ndarray  # (H, W, 2): u' (column), v' (row)
    valid: np.ndarray

    def __post_init__(self):
        tgt = np.array(self.target, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if tgt.ndim != 3 or tgt.shape[2] != 2 or valid.shape != tgt.shape[:2]:
            raise ValueError("target must be HxWx2 and valid HxW")
        valid &= np.all(np.isfinite(tgt), axis=2)
        tgt[~valid] = 0.0
        for name, arr in (("target", tgt), ("valid", valid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.valid.shape

    @classmethod
    def identity(cls, H, W, valid=None) -> "FlowMap":
        v, u = np.mgrid[0:H, 0:W].astype(np.float64)
        return cls(np.stack([u, v], axis=-1), np.ones((H, W), bool) if valid is None else valid)

    def target_pixels(self):
        """Nearest integer (column, row) per entry; only meaningful where valid."""
        W = self.shape[1]
        return pixel_of(self.target[..., 0], self.target[..., 1], W)


@dataclass(frozen=True)
class SyntheticTransformParams:
    scale: float = 1.0
    u_shift: int = 0
    v_shift: int = 0
    tilt: float = 0.0

    def check(self, max_scale=1.25, max_u=None, max_v=None, max_tilt=20.0):
        if not 1.0 <= self.scale <= max_scale:
            raise ValueError(f"scale {self.scale} outside [1, {max_scale}]")
        if max_u is not None and abs(self.u_shift) > max_u:
            raise ValueError(f"u_shift {self.u_shift} exceeds {max_u}")
        if max_v is not None and abs(self.v_shift) > max_v:
            raise ValueError(f"v_shift {self.v_shift} exceeds {max_v}")
        if abs(self.tilt) > max_tilt:
            raise ValueError(f"tilt {self.tilt} exceeds {max_tilt}")

    @classmethod
    def sample(cls, rng, scale=(1.0, 1.25), max_u=50, max_v=0, max_tilt=20.0):
        return cls(
            float(rng.uniform(*scale)),
            int(rng.integers(-max_u, max_u + 1)),
            int(rng.integers(-max_v, max_v + 1)) if max_v else 0,
            float(rng.uniform(-max_tilt, max_tilt)),
        )


@dataclass(frozen=True)
class PairSelectionConfig:
    inner_radius: float = 1.0
    outer_radius: float = 5.0
    overlap_threshold: float = 0.2
    correspondence_distance: float = 0.2
    occlusion_margin: float = 0.5

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")
        if not 0 < self.overlap_threshold <= 1:
            raise ValueError("overlap_threshold must lie in (0, 1]")


# --- synthetic pairs -------------------------------------------------------------


def _centres(H, W):
    return (W - 1) / 2.0, (H - 1) / 2.0, max((W - 1) / 2.0, 1.0)


def synth_forward(u, v, params: SyntheticTransformParams, H, W):
    """Where source pixel coordinates land after scale, shift and tilt.

    Returns ``(u', v', inframe)``; ``inframe`` is false for columns that the
    zoom pushes outside the original sweep before the shift wraps them.
    """
    cu, cv, ct = _centres(H, W)
    s = params.scale
    u1 = cu + s * (np.asarray(u, dtype=np.float64) - cu)
    v1 = cv + s * (np.asarray(v, dtype=np.float64) - cv)
    inframe = (u1 >= 0) & (u1 <= W - 1)
    u2 = np.mod(u1 + params.u_shift, W)
    u2 = np.where(u2 >= W, u2 - W, u2)
    v3 = v1 + params.v_shift + params.tilt * (u2 - ct) / ct
    return u2, v3, inframe


def synth_inverse(U, V, params: SyntheticTransformParams, H, W):
    """Source coordinates that land on output pixel coordinates (U, V)."""
    cu, cv, ct = _centres(H, W)
    s = params.scale
    U = np.asarray(U, dtype=np.float64)
    v1 = np.asarray(V, dtype=np.float64) - params.tilt * (U - ct) / ct - params.v_shift
    u1 = np.mod(U - params.u_shift, W)
    return cu + (u1 - cu) / s, cv + (v1 - cv) / s


def synth_pair(image: ScanImage, params: SyntheticTransformParams):
    """Warp a scan image by zoom, column rotation, row shift and shear.

    Returns ``(warped, flow)``. The zoom resamples both channels with masked
    bilinear interpolation and divides range by the scale factor; the shear
    leaves range untouched.
    """
    H, W = image.shape
    V, U = np.mgrid[0:H, 0:W].astype(np.float64)
    su, sv = synth_inverse(U, V, params, H, W)
    vals, ok = _kernels.masked_bilinear(image.channels(), image.valid, su, sv)
    warped = ScanImage(vals[0] / params.scale, vals[1], ok)

    tu, tv, inframe = synth_forward(U, V, params, H, W)
    valid = image.valid & inframe & (tv >= 0) & (tv <= H - 1)
    col, row = pixel_of(tu, np.where(valid, tv, 0.0), W)
    valid &= warped.valid[np.clip(row, 0, H - 1), col]
    return warped, FlowMap(np.stack([tu, tv], axis=-1), valid)


# --- real pairs ----------------------------------------------------------------


def overlap(a: OrderedPointCloud, b: OrderedPointCloud, T: RigidTransform, corr_dist: float) -> float:
    """Fraction of ``a``'s valid points with a neighbour in ``b`` closer than ``corr_dist``."""
    pa = a.valid_points()
    if pa.shape[0] == 0:
        raise EmptyCloud("first cloud has no valid points")
    pb = b.valid_points()
    if pb.shape[0] == 0:
        return 0.0
    d, _ = cKDTree(pb).query(T.apply(pa), k=1, distance_upper_bound=corr_dist)
    return float(np.count_nonzero(d < corr_dist)) / pa.shape[0]


class PairList(list):
    """List of ``(anchor, partner, T)`` triples that also counts skipped anchors."""

    skipped: int = 0


def select_real_pairs(poses, clouds, cfg: PairSelectionConfig, anchor_stride=1, seed=0) -> PairList:
    """Pick one partner per anchor scan from the spherical shell around it.

    ``clouds`` is anything indexable by scan index (a list, or a lazy
    accessor). Partners are tried in a per-anchor random order until one
    passes the overlap gate; ``T`` maps anchor points into the partner frame.
    """
    pos = np.array([p.position for p in poses]).reshape(-1, 3)
    out = PairList()
    for i in range(0, len(poses), max(1, int(anchor_stride))):
        d = np.linalg.norm(pos - pos[i], axis=1)
        cand = np.nonzero((d >= cfg.inner_radius) & (d <= cfg.outer_radius))[0]
        cand = cand[cand != i]
        rng = np.random.default_rng([int(seed), i])
        accepted = False
        for j in rng.permutation(cand):
            j = int(j)
            T = relative_transform(poses[i], poses[j])
            try:
                om = overlap(clouds[i], clouds[j], T, cfg.correspondence_distance)
            except EmptyCloud:
                break
            if om > cfg.overlap_threshold:
                out.append((i, j, T))
                accepted = True
                break
        if not accepted:
            out.skipped += 1
    log.info("selected %d pairs, %d anchors skipped", len(out), out.skipped)
    return out


def pixel_flow(a: OrderedPointCloud, b_image: ScanImage, T: RigidTransform,
               model: SphericalModel, occlusion_margin: float = 0.5) -> FlowMap:
    """Ground-truth flow from scan ``a`` into scan image ``b`` via the known transform.

    An entry is dropped when its source is invalid, its target row leaves the
    beam table, its target pixel in ``b`` is invalid, or the transformed point
    lies more than ``occlusion_margin`` behind ``b``'s surface at that pixel.
    """
    H, W = b_image.shape
    pts = T.apply(a.points)
    u, v, r = continuous_coords(pts, model)
    valid = a.valid & np.isfinite(v)
    col, row = pixel_of(u, np.where(valid, v, 0.0), W)
    row = np.clip(row, 0, H - 1)
    valid &= b_image.valid[row, col]
    valid &= r <= b_image.range[row, col] + occlusion_margin
    return FlowMap(np.stack([u, np.where(valid, v, 0.0)], axis=-1), valid)


# --- files -------------------------------------------------------------------------


def write_manifest(path, pairs) -> None:
    lines = []
    for i, j, T in pairs:
        vals = " ".join(repr(float(x)) for x in T.matrix3x4().reshape(-1))
        lines.append(f"{int(i)} {int(j)} {vals}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path):
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 14:
            raise FormatError(f"{path}:{lineno}: expected 14 fields, got {len(parts)}")
        M = np.array([float(x) for x in parts[2:]]).reshape(3, 4)
        pairs.append((int(parts[0]), int(parts[1]), RigidTransform.from_matrix(M)))
    return pairs


def write_flow(path, flow: FlowMap) -> None:
    # the scan container's range/intensity slots carry u'/v'
    write_container(path, flow.target[..., 0], flow.target[..., 1], flow.valid)


def read_flow(path) -> FlowMap:
    u, v, valid, _ = read_scan_raw(path)
    W = u.shape[1]
    # float32 storage can round a value just below W up to W
    u = np.where(u >= W, u - W, u)
    return FlowMap(np.stack([u, v], axis=-1), valid)
