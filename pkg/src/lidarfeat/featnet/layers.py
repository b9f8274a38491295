"""Layer primitives with explicit backward passes.

Tensors are channel-first ``(C, H, W)`` float64 arrays. Convolutions pad
columns circularly (the sweep is 360 degrees) and rows by edge replication.
"""
import numpy as np


def _offsets(k, dilation):
    half = k // 2
    return [(a, b, (a - half) * dilation, (b - half) * dilation) for a in range(k) for b in range(k)]


def _pad(x, pad):
    """Replicate rows, wrap columns."""
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad)), mode="wrap")
    return np.pad(x, ((0, 0), (pad, pad), (0, 0)), mode="edge")


def _fold(gp, pad, H, W):
    """Adjoint of :func:`_pad`: sum padded gradients back onto their sources."""
    g = gp[:, pad : pad + H].copy()
    g[:, 0] += gp[:, :pad].sum(axis=1)
    g[:, H - 1] += gp[:, pad + H :].sum(axis=1)
    cols = (np.arange(g.shape[2]) - pad) % W
    if pad <= W:
        out = g[..., pad : pad + W].copy()
        out[..., :pad] += g[..., pad + W :]
        out[..., W - pad :] += g[..., :pad]
        return out
    out = np.zeros(g.shape[:2] + (W,))
    np.add.at(out, (slice(None), slice(None), cols), g)
    return out


def conv_forward(x, weight, bias, dilation=1):
    """k x k dilated convolution, stride 1, same-size output."""
    cout, cin, k, _ = weight.shape
    C, H, W = x.shape
    if C != cin:
        raise ValueError(f"conv expects {cin} input channels, got {C}")
    pad = (k // 2) * dilation
    xp = _pad(x, pad)
    wt = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
    out = np.zeros((cout, H * W))
    for a, b, dr, dc in _offsets(k, dilation):
        xs = xp[:, pad + dr : pad + dr + H, pad + dc : pad + dc + W].reshape(cin, H * W)
        out += wt[a, b] @ xs
    out += bias[:, None]
    return out.reshape(cout, H, W)


def conv_backward(dout, x, weight, dilation=1):
    """Gradients ``(dx, dweight, dbias)`` of a conv layer."""
    cout, cin, k, _ = weight.shape
    _, H, W = x.shape
    pad = (k // 2) * dilation
    xp = _pad(x, pad)
    g = dout.reshape(cout, H * W)
    wt = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))  # (k, k, cin, cout)
    dwt = np.zeros((k, k, cout, cin))
    gp = np.zeros_like(xp)
    for a, b, dr, dc in _offsets(k, dilation):
        rs = slice(pad + dr, pad + dr + H)
        cs = slice(pad + dc, pad + dc + W)
        dwt[a, b] = g @ xp[:, rs, cs].reshape(cin, H * W).T
        gp[:, rs, cs] += (wt[a, b] @ g).reshape(cin, H, W)
    return _fold(gp, pad, H, W), dwt.transpose(2, 3, 0, 1).copy(), g.sum(axis=1)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def l2norm_forward(x, eps=1e-20):
    """Normalise every pixel's channel vector to unit length."""
    n = np.sqrt((x * x).sum(axis=0, keepdims=True) + eps)
    return x / n, n


def l2norm_backward(dout, y, n):
    return (dout - y * (dout * y).sum(axis=0, keepdims=True)) / n
