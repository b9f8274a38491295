"""O(n^2) non-maximum suppression over thresholded candidates."""
import numpy as np


def brute_nms(scores, thr, radius):
    H, W = scores.shape
    cands = [(r, c) for r in range(H) for c in range(W) if scores[r, c] > thr]
    keep = np.zeros((H, W), bool)
    for r, c in cands:
        ok = True
        for r2, c2 in cands:
            if (r2, c2) == (r, c):
                continue
            dc = abs(c - c2) % W
            dc = min(dc, W - dc)
            if max(abs(r - r2), dc) > radius:
                continue
            ahead = scores[r2, c2] > scores[r, c] or (
                scores[r2, c2] == scores[r, c] and (r2, c2) < (r, c)
            )
            if ahead:
                ok = False
                break
        keep[r, c] = ok
    return keep
