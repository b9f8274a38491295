"""Training data: normalized image tensors, augmentation and pair crops."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DegenerateStats
from ..pairgen import FlowMap, SyntheticTransformParams, synth_pair
from ..projection import ScanImage


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """Normalized network input: ``(C, H, W)`` values plus a validity mask.

    Unlike :class:`ScanImage` values may be negative; invalid pixels are 0.
    """

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if data.ndim != 3 or data.shape[1:] != valid.shape:
            raise ValueError("data must be (C, H, W) with an (H, W) mask")
        data[:, ~valid] = 0.0
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.valid.shape


@dataclass(frozen=True)
class DatasetStats:
    mean: tuple
    std: tuple

    @classmethod
    def from_images(cls, images) -> "DatasetStats":
        """Per-channel moments over the valid pixels of every image."""
        chans = [[], []]
        for im in images:
            for k, ch in enumerate((im.range, im.intensity)):
                chans[k].append(ch[im.valid])
        vals = [np.concatenate(c) if c else np.empty(0) for c in chans]
        if any(v.size == 0 for v in vals):
            raise DegenerateStats("no valid pixels in dataset")
        return cls(tuple(float(v.mean()) for v in vals), tuple(float(v.std()) for v in vals))

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


def normalize(image: ScanImage, stats: DatasetStats) -> ImageTensor:
    """Per-channel ``(x - mean) / std`` on valid pixels; invalid pixels become 0."""
    std = np.asarray(stats.std, dtype=np.float64)
    if np.any(std < 1e-12):
        raise DegenerateStats(f"channel standard deviation too small: {stats.std}")
    mean = np.asarray(stats.mean, dtype=np.float64)
    data = (image.channels() - mean[:, None, None]) / std[:, None, None]
    return ImageTensor(data, image.valid)


@dataclass(frozen=True, eq=False)
class TrainSample:
    image_a: ImageTensor
    image_b: ImageTensor
    flow: FlowMap


@dataclass(frozen=True)
class AugmentConfig:
    noise_var: float = 0.04
    offset: float = 0.1
    scale: float = 0.1

    @classmethod
    def noise_only(cls, noise_var=0.04):
        return cls(noise_var, 0.0, 0.0)


def augment_image(image: ImageTensor, rng, cfg: AugmentConfig) -> ImageTensor:
    """Gaussian noise, then per-channel ``(1 + gamma)`` scaling and offset, on valid pixels."""
    C = image.data.shape[0]
    noise = rng.normal(0.0, np.sqrt(cfg.noise_var), image.data.shape) if cfg.noise_var > 0 else 0.0
    gamma = rng.uniform(-cfg.scale, cfg.scale, C) if cfg.scale > 0 else np.zeros(C)
    off = rng.uniform(-cfg.offset, cfg.offset, C) if cfg.offset > 0 else np.zeros(C)
    out = (image.data + noise) * (1.0 + gamma)[:, None, None] + off[:, None, None]
    return ImageTensor(out, image.valid)


def augment(sample: TrainSample, rng, cfg: AugmentConfig = AugmentConfig()) -> TrainSample:
    return replace(
        sample,
        image_a=augment_image(sample.image_a, rng, cfg),
        image_b=augment_image(sample.image_b, rng, cfg),
    )


def _take(data, r0, c0, h, w):
    W = data.shape[-1]
    cols = (c0 + np.arange(w)) % W
    return data[..., r0 : r0 + h, :][..., cols]


def crop_pair(sample: TrainSample, rng, size=(64, 180)) -> TrainSample:
    """Crop both images around a random valid correspondence.

    The ``b`` window is centred on where the chosen ``a`` pixel lands, and
    flow targets are re-expressed in the cropped ``b`` frame; entries that
    leave the ``b`` window become invalid. Columns wrap.
    """
    H, W = sample.flow.shape
    h, w = min(size[0], H), min(size[1], W)
    rows, cols = np.nonzero(sample.flow.valid)
    if rows.size == 0:
        raise ValueError("sample has no valid correspondences to crop around")
    k = int(rng.integers(rows.size))
    ra, ca = int(rows[k]), int(cols[k])
    ub, vb = sample.flow.target[ra, ca]
    ra0 = int(np.clip(ra - h // 2, 0, H - h))
    ca0 = (ca - w // 2) % W
    rb0 = int(np.clip(int(round(vb)) - h // 2, 0, H - h))
    cb0 = (int(round(ub)) - w // 2) % W

    tgt = _take(np.moveaxis(sample.flow.target, -1, 0), ra0, ca0, h, w)
    fvalid = _take(sample.flow.valid, ra0, ca0, h, w)
    u = np.mod(tgt[0] - cb0, W)
    v = tgt[1] - rb0
    if w < W:
        fvalid = fvalid & (u <= w - 1)
    fvalid = fvalid & (v >= 0) & (v <= h - 1)
    ia = sample.image_a
    ib = sample.image_b
    return TrainSample(
        ImageTensor(_take(ia.data, ra0, ca0, h, w), _take(ia.valid, ra0, ca0, h, w)),
        ImageTensor(_take(ib.data, rb0, cb0, h, w), _take(ib.valid, rb0, cb0, h, w)),
        FlowMap(np.stack([u, v], axis=-1), fvalid),
    )


def synthetic_samples(images, stats: DatasetStats, n, seed=0, **sample_kw):
    """``n`` normalized synthetic pairs drawn round-robin from ``images``.

    Keyword arguments go to :meth:`SyntheticTransformParams.sample`.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        img = images[k % len(images)]
        params = SyntheticTransformParams.sample(rng, **sample_kw)
        warped, flow = synth_pair(img, params)
        out.append(TrainSample(normalize(img, stats), normalize(warped, stats), flow))
    return out
