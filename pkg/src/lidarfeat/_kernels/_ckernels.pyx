# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels. Mirrors ``_pykernels`` bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isfinite

cnp.import_array()


cdef inline bint _ahead(double sa, Py_ssize_t ra, Py_ssize_t ca,
                        double sb, Py_ssize_t rb, Py_ssize_t cb):
    # True when candidate a precedes candidate b in the NMS order
    if sa != sb:
        return sa > sb
    if ra != rb:
        return ra < rb
    return ca < cb


def nms_mask(scores, double threshold, Py_ssize_t radius):
    cdef double[:, ::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t H = s.shape[0], W = s.shape[1]
    out = np.zeros((H, W), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] keep = out
    cdef Py_ssize_t r, c, dr, dc, rr, cc
    cdef double sv, so
    cdef bint ok
    for r in range(H):
        for c in range(W):
            sv = s[r, c]
            if not sv > threshold:
                continue
            ok = True
            for dr in range(-radius, radius + 1):
                rr = r + dr
                if rr < 0 or rr >= H:
                    continue
                for dc in range(-radius, radius + 1):
                    cc = (c + dc) % W
                    if cc < 0:
                        cc += W
                    if rr == r and cc == c:
                        continue
                    so = s[rr, cc]
                    if so > threshold and _ahead(so, rr, cc, sv, r, c):
                        ok = False
                        break
                if not ok:
                    break
            keep[r, c] = ok
    return out.astype(bool)


def scatter_nearest(rows, cols, ranges, Py_ssize_t H, Py_ssize_t W):
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] cv = np.ascontiguousarray(cols, dtype=np.int64)
    cdef double[::1] dv = np.ascontiguousarray(ranges, dtype=np.float64)
    out = np.full((H, W), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    best_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] best = best_arr
    cdef Py_ssize_t i, n = rv.shape[0]
    cdef cnp.int64_t r, c
    for i in range(n):
        r = rv[i]
        c = cv[i]
        # strict < keeps the lower index on ties
        if o[r, c] < 0 or dv[i] < best[r, c]:
            o[r, c] = i
            best[r, c] = dv[i]
    return out


def masked_bilinear(channels, valid, src_u, src_v):
    cdef double[:, :, ::1] ch = np.ascontiguousarray(channels, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] va = np.ascontiguousarray(valid, dtype=np.uint8)
    su_arr = np.asarray(src_u, dtype=np.float64)
    shape = su_arr.shape
    cdef double[::1] su = np.ascontiguousarray(su_arr.reshape(-1))
    cdef double[::1] sv = np.ascontiguousarray(np.asarray(src_v, dtype=np.float64).reshape(-1))
    cdef Py_ssize_t C = ch.shape[0], H = ch.shape[1], W = ch.shape[2]
    cdef Py_ssize_t n = su.shape[0]
    acc_arr = np.zeros((C, n), dtype=np.float64)
    ok_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] acc = acc_arr
    cdef cnp.uint8_t[::1] okv = ok_arr
    cdef double[4] w
    cdef Py_ssize_t[4] dvs
    cdef Py_ssize_t[4] dus
    dvs[0] = 0; dvs[1] = 0; dvs[2] = 1; dvs[3] = 1
    dus[0] = 0; dus[1] = 1; dus[2] = 0; dus[3] = 1
    cdef Py_ssize_t i, k, ch_i, rr, cc, iu, iv
    cdef double u, v, fu, fv, wsum, wk
    for i in range(n):
        u = su[i]
        v = sv[i]
        if not (isfinite(u) and isfinite(v)):
            continue
        iu = <Py_ssize_t>floor(u)
        iv = <Py_ssize_t>floor(v)
        fu = u - floor(u)
        fv = v - floor(v)
        w[0] = (1 - fv) * (1 - fu)
        w[1] = (1 - fv) * fu
        w[2] = fv * (1 - fu)
        w[3] = fv * fu
        wsum = 0.0
        for k in range(4):
            wk = w[k]
            if not wk > 0:
                continue
            rr = iv + dvs[k]
            if rr < 0 or rr >= H:
                continue
            cc = (iu + dus[k]) % W
            if cc < 0:
                cc += W
            if not va[rr, cc]:
                continue
            for ch_i in range(C):
                acc[ch_i, i] += wk * ch[ch_i, rr, cc]
            wsum += wk
        if wsum > 0:
            okv[i] = 1
            for ch_i in range(C):
                acc[ch_i, i] /= wsum
    return acc_arr.reshape((C,) + shape), ok_arr.astype(bool).reshape(shape)
