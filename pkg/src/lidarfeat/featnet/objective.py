"""Twin-network training loss: patch repeatability, peakiness, AP reliability.

All functions work on channel-first outputs: descriptors ``(d, H, W)``,
score maps ``(H, W)``. Each term returns its value and gradients with
respect to the maps it reads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoValidCorrespondences
from ..projection import pixel_of


@dataclass
class LossBreakdown:
    total: float
    repeat: float
    peaky: float
    reliab: float

    def as_row(self):
        return [self.total, self.repeat, self.peaky, self.reliab]


def _window_shape(shape, size):
    return min(size, shape[0]), min(size, shape[1]), max(size // 2, 1)


def windows(x, size):
    """N x N patches at stride N//2 as an ``(nr, nc, ph, pw)`` view."""
    ph, pw, st = _window_shape(x.shape, size)
    return np.lib.stride_tricks.sliding_window_view(x, (ph, pw))[::st, ::st]


def unwindow(G, shape, size):
    """Adjoint of :func:`windows`: accumulate patch gradients onto the image."""
    ph, pw, st = _window_shape(shape, size)
    nr, nc = G.shape[:2]
    out = np.zeros(shape)
    for a in range(ph):
        for b in range(pw):
            out[a : a + st * (nr - 1) + 1 : st, b : b + st * (nc - 1) + 1 : st] += G[:, :, a, b]
    return out


# --- bilinear warp of a score map ------------------------------------------


def _bilinear_setup(u, v, H, W):
    u0 = np.floor(u).astype(np.int64)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, H - 1)
    fu = u - u0
    fv = np.clip(v - v0, 0.0, 1.0)
    u0 %= W
    u1 = (u0 + 1) % W
    v1 = np.minimum(v0 + 1, H - 1)
    idx = [(v0, u0), (v0, u1), (v1, u0), (v1, u1)]
    wts = [(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu]
    return idx, wts


def warp_map(m, target, mask):
    """Sample ``m`` at real flow targets (column-wrapped); zero where masked."""
    H, W = m.shape
    u = np.where(mask, target[..., 0], 0.0)
    v = np.where(mask, target[..., 1], 0.0)
    idx, wts = _bilinear_setup(u, v, H, W)
    out = sum(w * m[r, c] for (r, c), w in zip(idx, wts))
    return np.where(mask, out, 0.0)


def warp_map_backward(g, target, mask, shape):
    H, W = shape
    u = np.where(mask, target[..., 0], 0.0)
    v = np.where(mask, target[..., 1], 0.0)
    idx, wts = _bilinear_setup(u, v, H, W)
    g = np.where(mask, g, 0.0)
    out = np.zeros(shape)
    for (r, c), w in zip(idx, wts):
        np.add.at(out, (r, c), w * g)
    return out


# --- term 1: cosine patch repeatability -------------------------------------


def repeat_term(rep_a, rep_b, target, mask, patch):
    """1 - mean over patches of cosine(rep_a, warp(rep_b)); masked pixels ignored."""
    wb = warp_map(rep_b, target, mask)
    a = np.where(mask, rep_a, 0.0)
    pa, pb = windows(a, patch), windows(wb, patch)
    used = windows(mask, patch).any(axis=(2, 3))
    if not used.any():
        raise NoValidCorrespondences("no patch contains a valid correspondence")
    ab = (pa * pb).sum(axis=(2, 3))
    aa = (pa * pa).sum(axis=(2, 3))
    bb = (pb * pb).sum(axis=(2, 3))
    den = np.maximum(np.sqrt(aa * bb), 1e-12)
    cos = ab / den
    n = int(used.sum())
    scale = np.where(used, -1.0 / n, 0.0)[..., None, None]
    da_w = scale * (pb / den[..., None, None] - (ab / (np.maximum(aa, 1e-24) * den))[..., None, None] * pa)
    db_w = scale * (pa / den[..., None, None] - (ab / (np.maximum(bb, 1e-24) * den))[..., None, None] * pb)
    da = np.where(mask, unwindow(da_w, a.shape, patch), 0.0)
    db = warp_map_backward(unwindow(db_w, a.shape, patch), target, mask, a.shape)
    return 1.0 - float(cos[used].mean()), da, db


# --- term 2: peakiness -------------------------------------------------------


def peaky_single(rep, valid, patch):
    """Mean over patches of (max - mean) over valid pixels, its gradient, patch count."""
    P = windows(rep, patch)
    M = windows(valid, patch)
    nr, nc, ph, pw = P.shape
    k = M.sum(axis=(2, 3))
    used = k > 0
    n = int(used.sum())
    if n == 0:
        return 0.0, np.zeros(rep.shape), 0
    flat = np.where(M, P, -np.inf).reshape(nr, nc, -1)
    arg = np.argmax(flat, axis=2)
    mx = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]
    mean = (P * M).sum(axis=(2, 3)) / np.maximum(k, 1)
    vals = (mx - mean)[used]
    G = np.where(M, -1.0 / np.maximum(k, 1)[..., None, None], 0.0).reshape(nr, nc, -1)
    np.put_along_axis(G, arg[..., None], np.take_along_axis(G, arg[..., None], axis=2) + 1.0, axis=2)
    G = np.where(used[..., None], G, 0.0).reshape(nr, nc, ph, pw) / n
    return float(vals.mean()), unwindow(G, rep.shape, patch), n


def peaky_term(rep_a, rep_b, valid_a, valid_b, patch):
    """1 - average peak height over both images; 1 for constant maps."""
    va, ga, na = peaky_single(rep_a, valid_a, patch)
    vb, gb, nb = peaky_single(rep_b, valid_b, patch)
    used = (na > 0) + (nb > 0)
    if used == 0:
        return 1.0, ga, gb
    return 1.0 - (va + vb) / used, -ga / used, -gb / used


# --- term 3: AP-based reliability ------------------------------------------


def _queries(mask, stride):
    sel = np.zeros_like(mask)
    sel[::stride, ::stride] = True
    return np.nonzero(mask & sel)


def reliab_term(desc_a, desc_b, rel_a, valid_b, target, mask, window=16, ignore=2,
                nbins=20, kappa=0.5, stride=1):
    """Reliability-gated average-precision loss along the target row.

    Each query pixel of ``a`` scores candidates ``b[row, col+o]`` for
    ``|o| <= window``: ``o == 0`` is the positive, ``0 < |o| <= ignore`` is
    skipped, the rest (if valid in ``b``) are negatives. Similarities map to
    [0, 1] and fall into ``nbins`` triangular bins; AP comes from the binned
    cumulative precision. Per query: ``1 - (AP * R + kappa * (1 - R))``.
    """
    d, H, W = desc_a.shape
    qr, qc = _queries(mask, stride)
    if qr.size == 0:
        raise NoValidCorrespondences("no valid flow entries")
    col, row = pixel_of(target[qr, qc, 0], target[qr, qc, 1], W)
    row = np.clip(row, 0, H - 1)
    offs = np.arange(-window, window + 1)
    cc = (col[:, None] + offs[None, :]) % W  # (Q, K)
    rr = np.broadcast_to(row[:, None], cc.shape)
    qa = desc_a[:, qr, qc].T  # (Q, d)
    cb = desc_b[:, rr, cc]  # (d, Q, K)
    s = np.einsum("qd,dqk->qk", qa, cb)
    x = (s + 1.0) / 2.0
    is_pos = offs == 0
    usable = valid_b[rr, cc] & ~((np.abs(offs) >= 1) & (np.abs(offs) <= ignore))[None, :]
    usable[:, is_pos] = True

    # each similarity splits linearly between two adjacent bins (centres 1 - q*delta)
    delta = 1.0 / (nbins - 1)
    t = np.clip((1.0 - x) / delta, 0.0, nbins - 1)
    j = np.minimum(np.floor(t).astype(np.int64), nbins - 2)
    f = t - j
    wgt = usable.astype(np.float64)
    Qn = qr.size
    base = np.arange(Qn)[:, None] * nbins
    lo, hi = (base + j).ravel(), (base + j + 1).ravel()
    h_lo, h_hi = ((1.0 - f) * wgt).ravel(), (f * wgt).ravel()
    size = Qn * nbins
    N = (np.bincount(lo, h_lo, size) + np.bincount(hi, h_hi, size)).reshape(Qn, nbins)
    pos_lo, pos_hi = (base + j)[:, is_pos].ravel(), (base + j + 1)[:, is_pos].ravel()
    P = (np.bincount(pos_lo, h_lo.reshape(Qn, -1)[:, is_pos].ravel(), size)
         + np.bincount(pos_hi, h_hi.reshape(Qn, -1)[:, is_pos].ravel(), size)).reshape(Qn, nbins)
    cP = np.cumsum(P, axis=1)
    cN = np.cumsum(N, axis=1) + 1e-16
    prec = cP / cN
    ptot = P.sum(axis=1) + 1e-16
    ap = (prec * P).sum(axis=1) / ptot

    # reverse cumulative sums carry the cumulative-precision dependencies
    A = P / cN
    rA = np.cumsum(A[:, ::-1], axis=1)[:, ::-1]
    rB = np.cumsum((P * cP / cN**2)[:, ::-1], axis=1)[:, ::-1]
    dAP_dP = (prec + rA - ap[:, None]) / ptot[:, None]
    dAP_dN = -rB / ptot[:, None]

    R = rel_a[qr, qc]
    per_q = 1.0 - (ap * R + kappa * (1.0 - R))
    Q = qr.size
    value = float(per_q.mean())

    g_ap = -R / Q
    g_lo = np.take_along_axis(dAP_dN, j, axis=1)
    g_hi = np.take_along_axis(dAP_dN, j + 1, axis=1)
    g_lo[:, is_pos] += np.take_along_axis(dAP_dP, j[:, is_pos], axis=1)
    g_hi[:, is_pos] += np.take_along_axis(dAP_dP, j[:, is_pos] + 1, axis=1)
    inside = (x > 0.0) & (x < 1.0)
    dx = (g_lo - g_hi) / delta * wgt * inside * g_ap[:, None]  # (Q, K)
    ds = dx / 2.0

    d_desc_a = np.zeros_like(desc_a)
    d_desc_b = np.zeros_like(desc_b)
    ga = np.einsum("qk,dqk->qd", ds, cb)
    np.add.at(d_desc_a, (slice(None), qr, qc), ga.T)
    pix = (rr * W + cc).ravel()
    gb = (ds[:, :, None] * qa[:, None, :]).reshape(-1, d)  # (Q*K, d)
    for c in range(d):
        d_desc_b[c] = np.bincount(pix, gb[:, c], H * W).reshape(H, W)
    d_rel = np.zeros_like(rel_a)
    np.add.at(d_rel, (qr, qc), -(ap - kappa) / Q)
    return value, d_desc_a, d_desc_b, d_rel, ap


# --- combined ----------------------------------------------------------------


def pair_loss(out_a, out_b, target, mask, valid_a, valid_b, config):
    """Weighted loss of one pair plus gradients for each side's outputs.

    ``out_*`` are ``(desc, rel, rep)`` triples; returns
    ``(LossBreakdown, grads_a, grads_b)`` with grads in the same layout.
    """
    desc_a, rel_a, rep_a = out_a
    desc_b, rel_b, rep_b = out_b
    mask = np.asarray(mask, bool) & np.asarray(valid_a, bool)
    if not mask.any():
        raise NoValidCorrespondences("flow has no valid entries")
    N = config.patch_size
    lr, gra, grb = repeat_term(rep_a, rep_b, target, mask, N)
    lp, gpa, gpb = peaky_term(rep_a, rep_b, valid_a, valid_b, N)
    ll, gda, gdb, grel, _ = reliab_term(
        desc_a, desc_b, rel_a, valid_b, target, mask, config.ap_window, config.ap_ignore,
        config.ap_bins, config.ap_kappa, config.ap_stride,
    )
    wr, wp, wl = config.weight_repeat, config.weight_peaky, config.weight_reliab
    total = wr * lr + wp * lp + wl * ll
    grads_a = (wl * gda, wl * grel, wr * gra + wp * gpa)
    grads_b = (wl * gdb, np.zeros_like(rel_b), wr * grb + wp * gpb)
    return LossBreakdown(total, lr, lp, ll), grads_a, grads_b


def loss(maps_a, maps_b, flow, config, valid_a=None, valid_b=None) -> LossBreakdown:
    """Loss between two dense feature maps linked by a flow map."""
    H, W = maps_a.shape
    va = np.ones((H, W), bool) if valid_a is None else valid_a
    vb = np.ones(maps_b.shape, bool) if valid_b is None else valid_b
    out_a = (np.moveaxis(maps_a.descriptors, -1, 0), maps_a.reliability, maps_a.repeatability)
    out_b = (np.moveaxis(maps_b.descriptors, -1, 0), maps_b.reliability, maps_b.repeatability)
    result, _, _ = pair_loss(out_a, out_b, flow.target, flow.valid, va, vb, config)
    return result
