"""Fully convolutional detector/descriptor with a weight file format."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, ShapeMismatch
from . import layers

DEFAULT_LAYERS = ((32, 3, 1), (32, 3, 1), (64, 3, 2), (64, 3, 4), (128, 3, 1))
TOY_LAYERS = ((8, 3, 1), (16, 3, 2), (16, 3, 4))


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and loss hyper-parameters.

    ``layers`` lists (out_channels, kernel, dilation) for the trunk; three 1x1
    heads produce descriptors, reliability and repeatability.
    """

    descriptor_dim: int = 32
    layers: tuple = DEFAULT_LAYERS
    in_channels: int = 2
    patch_size: int = 8
    batch_size: int = 4
    weight_repeat: float = 1.0
    weight_peaky: float = 0.5
    weight_reliab: float = 1.0
    ap_window: int = 16
    ap_ignore: int = 2
    ap_bins: int = 20
    ap_kappa: float = 0.5
    ap_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(int(v) for v in l) for l in self.layers))
        if self.patch_size < 2:
            raise ValueError("patch_size must be at least 2")
        if self.descriptor_dim < 1:
            raise ValueError("descriptor_dim must be positive")
        if self.ap_ignore >= self.ap_window:
            raise ValueError("ap_ignore must be smaller than ap_window")

    @classmethod
    def toy(cls, **kw) -> "NetworkConfig":
        kw.setdefault("layers", TOY_LAYERS)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [list(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkConfig":
        d = dict(d)
        d["layers"] = tuple(tuple(l) for l in d.get("layers", DEFAULT_LAYERS))
        return cls(**d)

    def param_shapes(self):
        """Ordered (name, shape) of every tensor."""
        shapes = []
        cin = self.in_channels
        for i, (cout, k, _) in enumerate(self.layers):
            shapes.append((f"conv{i}.w", (cout, cin, k, k)))
            shapes.append((f"conv{i}.b", (cout,)))
            cin = cout
        for name, cout in (("desc", self.descriptor_dim), ("reliab", 1), ("repeat", 1)):
            shapes.append((f"{name}.w", (cout, cin)))
            shapes.append((f"{name}.b", (cout,)))
        return shapes


@dataclass(eq=False)
class DenseFeatureMap:
    """Dense network output for one image.

    ``descriptors`` is (H, W, d); both score maps are (H, W) in [0, 1].
    """

    descriptors: np.ndarray
    reliability: np.ndarray
    repeatability: np.ndarray

    @property
    def shape(self):
        return self.reliability.shape


def init_weights(config: NetworkConfig, seed=0, zero_bias=True) -> dict:
    rng = np.random.default_rng(seed)
    w = {}
    for name, shape in config.param_shapes():
        if name.endswith(".b"):
            w[name] = np.zeros(shape) if zero_bias else rng.normal(0, 0.1, shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            w[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return w


def check_weights(config: NetworkConfig, weights) -> None:
    for name, shape in config.param_shapes():
        if name not in weights:
            raise ShapeMismatch(f"missing tensor {name}")
        if tuple(weights[name].shape) != tuple(shape):
            raise ShapeMismatch(f"{name}: expected {shape}, got {tuple(weights[name].shape)}")


def forward(x, config: NetworkConfig, weights, keep_cache=False):
    """Run the network on a (C, H, W) input.

    Returns ``(desc (d,H,W), reliab (H,W), repeat (H,W), cache)``; the cache
    is None unless ``keep_cache``.
    """
    check_weights(config, weights)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != config.in_channels:
        raise ShapeMismatch(f"input must be ({config.in_channels}, H, W), got {x.shape}")
    C, H, W = x.shape
    acts = [x]
    pre = []
    h = x
    for i, (_, _, dil) in enumerate(config.layers):
        z = layers.conv_forward(h, weights[f"conv{i}.w"], weights[f"conv{i}.b"], dil)
        h = layers.relu_forward(z)
        pre.append(z)
        acts.append(h)
    feat = h.reshape(h.shape[0], H * W)
    raw = weights["desc.w"] @ feat + weights["desc.b"][:, None]
    desc, norm = layers.l2norm_forward(raw)
    rel = layers.sigmoid_forward(weights["reliab.w"] @ feat + weights["reliab.b"][:, None])
    rep = layers.sigmoid_forward(weights["repeat.w"] @ feat + weights["repeat.b"][:, None])
    desc = desc.reshape(-1, H, W)
    rel = rel.reshape(H, W)
    rep = rep.reshape(H, W)
    cache = None
    if keep_cache:
        cache = {"acts": acts, "pre": pre, "desc": desc, "norm": norm, "rel": rel, "rep": rep}
    return desc, rel, rep, cache


def backward(cache, config: NetworkConfig, weights, d_desc, d_rel, d_rep):
    """Weight gradients given gradients of the three outputs."""
    acts, pre = cache["acts"], cache["pre"]
    H, W = cache["rel"].shape
    feat = acts[-1].reshape(acts[-1].shape[0], H * W)
    grads = {}
    d_raw = layers.l2norm_backward(
        d_desc.reshape(-1, H * W), cache["desc"].reshape(-1, H * W), cache["norm"]
    )
    d_rel_z = layers.sigmoid_backward(d_rel.reshape(1, -1), cache["rel"].reshape(1, -1))
    d_rep_z = layers.sigmoid_backward(d_rep.reshape(1, -1), cache["rep"].reshape(1, -1))
    d_feat = np.zeros_like(feat)
    for name, dz in (("desc", d_raw), ("reliab", d_rel_z), ("repeat", d_rep_z)):
        grads[f"{name}.w"] = dz @ feat.T
        grads[f"{name}.b"] = dz.sum(axis=1)
        d_feat += weights[f"{name}.w"].T @ dz
    dh = d_feat.reshape(-1, H, W)
    for i in reversed(range(len(config.layers))):
        dz = layers.relu_backward(dh, pre[i])
        dil = config.layers[i][2]
        dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv_backward(
            dz, acts[i], weights[f"conv{i}.w"], dil
        )
    return grads


def dense_maps(x, config, weights) -> DenseFeatureMap:
    desc, rel, rep, _ = forward(x, config, weights)
    return DenseFeatureMap(np.moveaxis(desc, 0, -1), rel, rep)


# --- weight files ----------------------------------------------------------

_MAGIC = b"W3DL"
_VERSION = 1


def save_weights(path, config: NetworkConfig, weights, meta=None) -> None:
    """Write weights; ``meta`` (JSON-able, e.g. normalization stats) rides in the config block."""
    check_weights(config, weights)
    block = json.dumps({"network": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(block)))
        f.write(block)
        for name, _ in config.param_shapes():
            f.write(np.asarray(weights[name], dtype="<f4").tobytes())


def load_weights(path):
    """Return ``(config, weights, meta)``; tensors come back as float64."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a weight file")
    version, n = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        block = json.loads(data[12 : 12 + n])
        config = NetworkConfig.from_dict(block["network"])
        meta = block.get("meta", {})
    except (ValueError, TypeError, KeyError) as e:
        raise FormatError(f"{path}: bad config block: {e}") from e
    off = 12 + n
    weights = {}
    for name, shape in config.param_shapes():
        count = int(np.prod(shape))
        if off + 4 * count > len(data):
            raise FormatError(f"{path}: truncated at {name}")
        weights[name] = np.frombuffer(data, "<f4", count, off).reshape(shape).astype(np.float64)
        off += 4 * count
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return config, weights, meta
