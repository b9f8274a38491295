"""Scalar, loop-based re-derivations used as independent oracles."""
import math

import numpy as np


def elevation_to_row(el, elev):
    """Fractional row for an elevation by walking the beam table; None outside."""
    H = len(elev)
    if el > elev[0] + 1e-9 or el < elev[-1] - 1e-9:
        return None
    el = min(max(el, elev[-1]), elev[0])
    for i in range(H - 1):
        hi, lo = elev[i], elev[i + 1]
        if lo <= el <= hi:
            return i + (hi - el) / (hi - lo)
    return float(H - 1)


def brute_pixel_flow(cloud, b_image, T, model, margin):
    H, W = b_image.range.shape
    elev = list(model.elevation_angles)
    R, t = T.rotation, T.translation
    target = np.zeros((H, W, 2))
    valid = np.zeros((H, W), bool)
    for i in range(H):
        for j in range(W):
            if not cloud.valid[i, j]:
                continue
            p = cloud.points[i, j]
            q = [sum(R[k][m] * p[m] for m in range(3)) + t[k] for k in range(3)]
            r = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2)
            az = math.atan2(q[1], q[0])
            u = ((az + model.azimuth_offset) / model.azimuth_resolution) % W
            if u >= W:
                u -= W
            el = math.asin(max(-1.0, min(1.0, q[2] / r)))
            v = elevation_to_row(el, elev)
            if v is None:
                continue
            col = int(round(u)) % W
            row = int(round(v))
            if not b_image.valid[row, col]:
                continue
            if r > b_image.range[row, col] + margin:
                continue
            valid[i, j] = True
            target[i, j] = (u, v)
    return target, valid


def sequential_synth_map(u, v, scale, u_shift, v_shift, tilt, H, W):
    """Apply zoom, then column rotation + row shift, then shear, one at a time."""
    cu, cv = (W - 1) / 2, (H - 1) / 2
    # zoom about the image centre
    uz = cu + scale * (u - cu)
    vz = cv + scale * (v - cv)
    inframe = 0 <= uz <= W - 1
    # rotate columns, shift rows
    us = (uz + u_shift) % W
    if us >= W:
        us -= W
    vs = vz + v_shift
    # vertical shear, linear in the output column
    ct = max((W - 1) / 2, 1.0)
    vt = vs + tilt * (us - ct) / ct
    return us, vt, inframe
