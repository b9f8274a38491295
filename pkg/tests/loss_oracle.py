"""Loop-by-loop reference for the twin-network loss, for tiny images only."""
import math

import numpy as np


def _patches(H, W, size):
    ph, pw = min(size, H), min(size, W)
    st = max(size // 2, 1)
    return [(r, c, ph, pw) for r in range(0, H - ph + 1, st) for c in range(0, W - pw + 1, st)]


def _sample(m, u, v):
    H, W = m.shape
    u0 = math.floor(u)
    v0 = min(max(math.floor(v), 0), H - 1)
    fu = u - u0
    fv = min(max(v - v0, 0.0), 1.0)
    v1 = min(v0 + 1, H - 1)
    a, b = u0 % W, (u0 + 1) % W
    return ((1 - fv) * (1 - fu) * m[v0, a] + (1 - fv) * fu * m[v0, b]
            + fv * (1 - fu) * m[v1, a] + fv * fu * m[v1, b])


def repeat_ref(rep_a, rep_b, target, mask, size):
    H, W = rep_a.shape
    cos = []
    for r, c, ph, pw in _patches(H, W, size):
        ab = aa = bb = 0.0
        used = False
        for i in range(r, r + ph):
            for j in range(c, c + pw):
                if not mask[i, j]:
                    continue
                used = True
                x = rep_a[i, j]
                y = _sample(rep_b, target[i, j, 0], target[i, j, 1])
                ab += x * y
                aa += x * x
                bb += y * y
        if used:
            cos.append(ab / max(math.sqrt(aa * bb), 1e-12))
    return 1.0 - sum(cos) / len(cos)


def _peak(rep, valid, size):
    H, W = rep.shape
    vals = []
    for r, c, ph, pw in _patches(H, W, size):
        xs = [rep[i, j] for i in range(r, r + ph) for j in range(c, c + pw) if valid[i, j]]
        if xs:
            vals.append(max(xs) - sum(xs) / len(xs))
    return vals


def peaky_ref(rep_a, rep_b, valid_a, valid_b, size):
    means = [sum(v) / len(v) for v in (_peak(rep_a, valid_a, size), _peak(rep_b, valid_b, size)) if v]
    return 1.0 - sum(means) / len(means) if means else 1.0


def reliab_ref(desc_a, desc_b, rel_a, valid_b, target, mask, window, ignore, nbins, kappa, stride):
    d, H, W = desc_a.shape
    delta = 1.0 / (nbins - 1)
    losses = []
    for r in range(0, H, stride):
        for c in range(0, W, stride):
            if not mask[r, c]:
                continue
            tc = int(np.rint(target[r, c, 0])) % W
            tr = min(max(int(np.rint(target[r, c, 1])), 0), H - 1)
            P = [0.0] * nbins
            N = [0.0] * nbins
            for o in range(-window, window + 1):
                if o != 0 and (abs(o) <= ignore or not valid_b[tr, (tc + o) % W]):
                    continue
                s = sum(desc_a[k, r, c] * desc_b[k, tr, (tc + o) % W] for k in range(d))
                t = min(max((1.0 - (s + 1.0) / 2.0) / delta, 0.0), nbins - 1)
                j = min(math.floor(t), nbins - 2)
                f = t - j
                N[j] += 1 - f
                N[j + 1] += f
                if o == 0:
                    P[j] += 1 - f
                    P[j + 1] += f
            ap = cp = cn = 0.0
            for q in range(nbins):
                cp += P[q]
                cn += N[q]
                ap += (cp / (cn + 1e-16)) * P[q]
            ap /= sum(P) + 1e-16
            R = rel_a[r, c]
            losses.append(1.0 - (ap * R + kappa * (1.0 - R)))
    return sum(losses) / len(losses)


def pair_loss_ref(out_a, out_b, target, mask, valid_a, valid_b, cfg):
    (da, ra, pa), (db, _, pb) = out_a, out_b
    mask = mask & valid_a
    lr = repeat_ref(pa, pb, target, mask, cfg.patch_size)
    lp = peaky_ref(pa, pb, valid_a, valid_b, cfg.patch_size)
    ll = reliab_ref(da, db, ra, valid_b, target, mask, cfg.ap_window, cfg.ap_ignore, cfg.ap_bins,
                    cfg.ap_kappa, cfg.ap_stride)
    return cfg.weight_repeat * lr + cfg.weight_peaky * lp + cfg.weight_reliab * ll, lr, lp, ll
