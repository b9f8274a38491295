"""Training-free stand-in for the network: corner scores and patch descriptors.

Produces a :class:`DenseFeatureMap` with the same contract as the learned
model, so extraction, matching and mapping can run without trained weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..projection import ScanImage
from .network import DenseFeatureMap


@dataclass(frozen=True)
class HandcraftedConfig:
    descriptor_dim: int = 32
    row_radius: int = 3
    col_radius: int = 6
    col_step: int = 2
    smoothing: float = 1.5
    harris_k: float = 0.04
    seed: int = 0


def _shift(x, dr, dc):
    """x[clip(i + dr), (j + dc) mod W] for every pixel."""
    H = x.shape[0]
    rows = np.clip(np.arange(H) + dr, 0, H - 1)
    return np.roll(x[rows], -dc, axis=1)


def _fill(chan, valid):
    """Replace invalid pixels by their nearest valid neighbour."""
    if valid.all() or not valid.any():
        return np.where(valid, chan, 0.0)
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return chan[ri, ci]


def _harris(chan, valid, sigma, k):
    gr = _fill(chan, valid)
    dv = ndimage.sobel(gr, axis=0, mode=("nearest", "wrap"))
    du = ndimage.sobel(gr, axis=1, mode=("nearest", "wrap"))
    smooth = lambda a: ndimage.gaussian_filter(a, sigma, mode=("nearest", "wrap"))
    a, b, c = smooth(du * du), smooth(du * dv), smooth(dv * dv)
    return a * c - b * b - k * (a + c) ** 2


def _percentile_rank(x, valid):
    out = np.zeros(x.shape)
    vals = x[valid]
    if vals.size < 2:
        out[valid] = 1.0
        return out
    order = np.argsort(vals, kind="stable")
    ranks = np.empty(vals.size)
    ranks[order] = np.arange(vals.size) / (vals.size - 1)
    out[valid] = ranks
    return out


def handcrafted_maps(image: ScanImage, cfg: HandcraftedConfig = HandcraftedConfig()) -> DenseFeatureMap:
    """Corner-response scores and randomly projected local patch descriptors.

    Range patches are expressed relative to the centre range (so they do not
    depend on distance); intensity patches are centred on their own mean.
    Scores are percentile ranks of a Harris response on log-range plus
    intensity; invalid pixels score 0.
    """
    valid = image.valid
    logr = np.log(np.where(valid, image.range, 1.0))
    resp = _harris(logr, valid, cfg.smoothing, cfg.harris_k) + _harris(
        image.intensity, valid, cfg.smoothing, cfg.harris_k
    )
    interior = ndimage.binary_erosion(valid, np.ones((3, 3)), border_value=1)
    score = _percentile_rank(resp, interior)

    r = np.maximum(_fill(image.range, valid), 1e-9)
    inten = _fill(image.intensity, valid)
    feats = []
    for dr in range(-cfg.row_radius, cfg.row_radius + 1):
        for dc in range(-cfg.col_radius, cfg.col_radius + 1, cfg.col_step):
            feats.append(np.clip((_shift(r, dr, dc) - r) / r, -0.5, 0.5))
            feats.append(_shift(inten, dr, dc))
    F = np.stack(feats, axis=-1)  # (H, W, 2 * patch)
    F[..., 1::2] -= F[..., 1::2].mean(axis=-1, keepdims=True)
    F[..., 1::2] *= 2.0
    proj = np.random.default_rng(cfg.seed).normal(size=(F.shape[-1], cfg.descriptor_dim))
    D = F @ proj
    D /= np.maximum(np.linalg.norm(D, axis=-1, keepdims=True), 1e-12)
    return DenseFeatureMap(D, np.where(valid, 1.0, 0.0), score)
