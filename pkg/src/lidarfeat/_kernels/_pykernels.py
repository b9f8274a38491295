"""Pure numpy/scipy implementations of the per-pixel kernels.

Behaviour must match ``_ckernels.pyx`` exactly; the test-suite runs both.
"""
import numpy as np
from scipy import ndimage


def nms_mask(scores, threshold, radius):
    """Boolean mask of candidates that win their (2r+1)^2 window.

    A candidate is a pixel with ``score > threshold``. Candidates are totally
    ordered by (score descending, row ascending, column ascending); a
    candidate survives iff no candidate ahead of it lies within Chebyshev
    distance ``radius``. Rows are clipped, columns wrap around.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    H, W = scores.shape
    cand = scores > threshold
    if not cand.any():
        return np.zeros((H, W), bool)
    rows, cols = np.nonzero(cand)
    order = np.lexsort((cols, rows, -scores[rows, cols]))
    big = order.size  # ranks of real candidates are all smaller
    rank = np.full((H, W), big, dtype=np.int64)
    rank[rows[order], cols[order]] = np.arange(order.size)
    r = int(radius)
    padded = np.pad(rank, ((0, 0), (r, r)), mode="wrap")
    padded = np.pad(padded, ((r, r), (0, 0)), constant_values=big)
    best = ndimage.minimum_filter(padded, size=2 * r + 1, mode="constant", cval=big)
    return cand & (rank == best[r : r + H, r : r + W])


def scatter_nearest(rows, cols, ranges, H, W):
    """Index of the nearest point landing on each pixel, -1 where none.

    Ties on range go to the lower point index.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    ranges = np.asarray(ranges, dtype=np.float64)
    out = np.full((H, W), -1, dtype=np.int64)
    if rows.size == 0:
        return out
    pix = rows * W + cols
    idx = np.arange(rows.size)
    order = np.lexsort((idx, ranges, pix))
    pix_sorted = pix[order]
    first = np.ones(order.size, bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = order[first]
    out.reshape(-1)[pix[winners]] = winners
    return out


def masked_bilinear(channels, valid, src_u, src_v):
    """Bilinear sampling that ignores invalid neighbours.

    ``channels`` is (C, H, W); ``src_u``/``src_v`` give real-valued column and
    row source coordinates for every output pixel. Columns wrap, rows do not.
    Output pixels whose valid neighbour weights sum to zero are invalid.
    """
    channels = np.asarray(channels, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    C, H, W = channels.shape
    su = np.asarray(src_u, dtype=np.float64)
    sv = np.asarray(src_v, dtype=np.float64)
    finite = np.isfinite(su) & np.isfinite(sv)
    su = np.where(finite, su, 0.0)
    sv = np.where(finite, sv, -10.0)
    u0 = np.floor(su)
    v0 = np.floor(sv)
    fu = su - u0
    fv = sv - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    acc = np.zeros((C,) + su.shape)
    wsum = np.zeros(su.shape)
    for dv, du, w in (
        (0, 0, (1 - fv) * (1 - fu)),
        (0, 1, (1 - fv) * fu),
        (1, 0, fv * (1 - fu)),
        (1, 1, fv * fu),
    ):
        r = v0 + dv
        c = np.mod(u0 + du, W)
        inside = (r >= 0) & (r < H) & finite
        rc = np.clip(r, 0, H - 1)
        ok = inside & valid[rc, c] & (w > 0)
        wk = np.where(ok, w, 0.0)
        acc += np.where(ok, wk * channels[:, rc, c], 0.0)
        wsum += wk
    out_valid = wsum > 0
    out = np.zeros_like(acc)
    np.divide(acc, wsum, out=out, where=out_valid)
    return out, out_valid
