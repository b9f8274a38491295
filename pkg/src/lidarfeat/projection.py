"""Scan images and the spherical projection between points and pixels.

Pixel coordinates are written (u, v) = (column, row). Column ``j`` looks
along azimuth ``j * azimuth_resolution - azimuth_offset``; row ``i`` along
``elevation_angles[i]`` (strictly decreasing, top row highest).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import FormatError, InvalidPixel
from .geom import OrderedPointCloud

TWO_PI = 2.0 * np.pi
# absorbs last-bit rounding when a point sits exactly on a column edge
_COL_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class ScanImage:
    range: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        rng = np.array(self.range, dtype=np.float64)
        inten = np.array(self.intensity, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if rng.ndim != 2 or inten.shape != rng.shape or valid.shape != rng.shape:
            raise ValueError("range, intensity and valid must be equal-shape 2-D arrays")
        valid &= np.isfinite(rng) & np.isfinite(inten) & (rng > 0)
        rng[~valid] = 0.0
        inten[~valid] = 0.0
        for name, arr in (("range", rng), ("intensity", inten), ("valid", valid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def height(self) -> int:
        return self.range.shape[0]

    @property
    def width(self) -> int:
        return self.range.shape[1]

    @property
    def shape(self):
        return self.range.shape

    def channels(self) -> np.ndarray:
        """(2, H, W) stack of range and intensity."""
        return np.stack([self.range, self.intensity])

    def with_channels(self, rng, inten, valid=None) -> "ScanImage":
        return ScanImage(rng, inten, self.valid if valid is None else valid)


@dataclass(frozen=True, eq=False)
class SphericalModel:
    azimuth_resolution: float
    elevation_angles: np.ndarray
    azimuth_offset: float = 0.0

    def __post_init__(self):
        elev = np.array(self.elevation_angles, dtype=np.float64).reshape(-1)
        if elev.size < 1:
            raise ValueError("need at least one elevation row")
        if elev.size > 1 and not np.all(np.diff(elev) < 0):
            raise ValueError("elevation_angles must be strictly decreasing")
        n = TWO_PI / self.azimuth_resolution
        if abs(n - round(n)) > 1e-6:
            raise ValueError("azimuth_resolution must divide 2*pi into whole columns")
        elev.setflags(write=False)
        object.__setattr__(self, "elevation_angles", elev)
        object.__setattr__(self, "azimuth_resolution", float(self.azimuth_resolution))
        object.__setattr__(self, "azimuth_offset", float(self.azimuth_offset))

    @classmethod
    def uniform(cls, H, W, fov_up, fov_down, azimuth_offset=0.0) -> "SphericalModel":
        """Evenly spaced beams from ``fov_up`` down to ``fov_down`` (radians)."""
        return cls(TWO_PI / W, np.linspace(fov_up, fov_down, H), azimuth_offset)

    @property
    def height(self) -> int:
        return self.elevation_angles.size

    @property
    def width(self) -> int:
        return int(round(TWO_PI / self.azimuth_resolution))

    def column_azimuths(self) -> np.ndarray:
        return np.arange(self.width) * self.azimuth_resolution - self.azimuth_offset

    def directions(self) -> np.ndarray:
        """(H, W, 3) unit ray directions for every pixel."""
        e = self.elevation_angles[:, None]
        a = self.column_azimuths()[None, :]
        return np.stack(
            np.broadcast_arrays(np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)),
            axis=-1,
        )

    def elevation_band(self):
        """(low, high) elevation limits beyond which points are dropped."""
        e = self.elevation_angles
        if e.size == 1:
            half = self.azimuth_resolution / 2
            return e[0] - half, e[0] + half
        return e[-1] - (e[-2] - e[-1]) / 2, e[0] + (e[0] - e[1]) / 2


@dataclass
class ProjectionReport:
    n_points: int
    n_dropped: int
    n_projected: int
    n_collisions: int
    winners: np.ndarray = field(repr=False)


def to_scan_image(cloud: OrderedPointCloud) -> ScanImage:
    rng = np.linalg.norm(cloud.points, axis=2)
    return ScanImage(rng, cloud.intensities, cloud.valid)


def continuous_coords(points, model: SphericalModel):
    """Real-valued (u, v, range) of points under the model.

    ``u`` lies in [0, W). ``v`` interpolates the beam table linearly and is
    NaN outside the table's angular extent (a 1e-9 rad slack absorbs
    rounding at the outermost beams).
    """
    p = np.asarray(points, dtype=np.float64)
    r = np.linalg.norm(p, axis=-1)
    W = model.width
    with np.errstate(invalid="ignore", divide="ignore"):
        az = np.arctan2(p[..., 1], p[..., 0])
        u = np.mod((az + model.azimuth_offset) / model.azimuth_resolution, W)
        u = np.where(u >= W, u - W, u)
        el = np.arcsin(np.clip(p[..., 2] / r, -1.0, 1.0))
    e = model.elevation_angles
    H = e.size
    if H == 1:
        v = np.where(np.abs(el - e[0]) <= 1e-9, 0.0, np.nan)
    else:
        el_c = np.clip(el, e[-1], e[0])
        v = np.interp(el_c, e[::-1], np.arange(H, dtype=np.float64)[::-1])
        outside = (el < e[-1] - 1e-9) | (el > e[0] + 1e-9) | ~np.isfinite(el)
        v = np.where(outside, np.nan, v)
    return u, v, r


def pixel_of(u, v, W):
    """Nearest pixel (column, row) to real flow coordinates; columns wrap."""
    col = np.mod(np.rint(np.asarray(u)).astype(np.int64), W)
    row = np.rint(np.asarray(v)).astype(np.int64)
    return col, row


def nearest_rows(elevation, model: SphericalModel):
    """Nearest beam index per elevation, -1 outside the model's band."""
    e = model.elevation_angles
    el = np.asarray(elevation, dtype=np.float64)
    lo, hi = model.elevation_band()
    inband = (el >= lo) & (el <= hi) & np.isfinite(el)
    asc = e[::-1]
    k = np.searchsorted(asc, np.where(inband, el, asc[0]))
    k0 = np.clip(k - 1, 0, asc.size - 1)
    k1 = np.clip(k, 0, asc.size - 1)
    pick = np.where(np.abs(asc[k1] - el) < np.abs(asc[k0] - el), k1, k0)
    rows = (asc.size - 1) - pick
    return np.where(inband, rows, -1)


def project(points, intensities, model: SphericalModel, H: int, W: int):
    """Rasterise loose points into a scan image, nearest point per pixel.

    Returns ``(image, report)``. Points outside the beam band, at zero range,
    or non-finite are dropped and counted in the report.
    """
    if model.height != H or model.width != W:
        raise ValueError(f"model is {model.height}x{model.width}, asked for {H}x{W}")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inten = np.asarray(intensities, dtype=np.float64).reshape(-1)
    r = np.linalg.norm(p, axis=1)
    ok = np.all(np.isfinite(p), axis=1) & (r > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        az = np.arctan2(p[:, 1], p[:, 0])
        el = np.arcsin(np.clip(p[:, 2] / r, -1.0, 1.0))
    rows = nearest_rows(np.where(ok, el, np.nan), model)
    ok &= rows >= 0
    col_real = (az + model.azimuth_offset) / model.azimuth_resolution
    cols = np.mod(np.floor(np.where(ok, col_real, 0.0) + _COL_EPS).astype(np.int64), W)
    idx = np.nonzero(ok)[0]
    win_local = _kernels.scatter_nearest(rows[idx], cols[idx], r[idx], H, W)
    hit = win_local >= 0
    winners = np.full((H, W), -1, dtype=np.int64)
    winners[hit] = idx[win_local[hit]]
    rng = np.zeros((H, W))
    out_i = np.zeros((H, W))
    rng[hit] = r[winners[hit]]
    out_i[hit] = inten[winners[hit]]
    n_proj = int(idx.size)
    report = ProjectionReport(
        n_points=int(p.shape[0]),
        n_dropped=int(p.shape[0] - n_proj),
        n_projected=n_proj,
        n_collisions=n_proj - int(hit.sum()),
        winners=winners,
    )
    return ScanImage(rng, out_i, hit), report


def lift(image: ScanImage, model: SphericalModel, pixel) -> np.ndarray:
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= v < image.height and 0 <= u < image.width) or not image.valid[v, u]:
        raise InvalidPixel(f"pixel (u={u}, v={v}) is not valid")
    e = model.elevation_angles[v]
    a = u * model.azimuth_resolution - model.azimuth_offset
    r = image.range[v, u]
    return r * np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])


def lift_image(image: ScanImage, model: SphericalModel) -> OrderedPointCloud:
    """Lift every valid pixel, giving the ordered cloud behind the image."""
    pts = model.directions() * image.range[..., None]
    return OrderedPointCloud(pts, image.intensity, image.valid)


# --- scan file container ----------------------------------------------------

_MAGIC = b"SCNI"
_VERSION = 1


def write_container(path, chan0, chan1, valid, elevation=None) -> None:
    """Write two float32 channels, a validity mask and an optional beam table."""
    chan0 = np.asarray(chan0)
    H, W = chan0.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, H, W))
        f.write(np.asarray(chan0, dtype="<f4").tobytes())
        f.write(np.asarray(chan1, dtype="<f4").tobytes())
        f.write(np.asarray(valid, dtype=np.uint8).tobytes())
        if elevation is not None:
            elev = np.asarray(elevation, dtype="<f4").reshape(-1)
            if elev.size != H:
                raise ValueError("elevation table length must equal H")
            f.write(elev.tobytes())


def write_scan(path, image: ScanImage, elevation=None) -> None:
    write_container(path, image.range, image.intensity, image.valid, elevation)


def read_scan_raw(path):
    """Return (chan0, chan1, valid, elevation-or-None) from a scan container."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a scan file")
    version, H, W = struct.unpack("<III", data[4:16])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = H * W
    need = 16 + 8 * n + n
    if len(data) not in (need, need + 4 * H):
        raise FormatError(f"{path}: truncated or oversized payload")
    off = 16
    c0 = np.frombuffer(data, "<f4", n, off).reshape(H, W).astype(np.float64)
    off += 4 * n
    c1 = np.frombuffer(data, "<f4", n, off).reshape(H, W).astype(np.float64)
    off += 4 * n
    valid = np.frombuffer(data, np.uint8, n, off).reshape(H, W).astype(bool)
    off += n
    elev = None
    if len(data) == need + 4 * H:
        elev = np.frombuffer(data, "<f4", H, off).astype(np.float64)
    return c0, c1, valid, elev


def read_scan(path):
    """Return ``(ScanImage, elevation table or None)``."""
    rng, inten, valid, elev = read_scan_raw(path)
    return ScanImage(rng, inten, valid), elev
