"""Descriptor matching and robust rigid registration between feature sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import Degenerate, EmptySet, NoCorrespondences, TooFewMatches
from .geom import OrderedPointCloud, RigidTransform

DEFAULT_INLIER_DIST = 0.3
DEFAULT_ITERATIONS = 1000


@dataclass(frozen=True, eq=False)
class MatchSet:
    idx_a: np.ndarray
    idx_b: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return int(self.idx_a.shape[0])

    def pairs(self):
        return list(zip(self.idx_a.tolist(), self.idx_b.tolist(), self.distance.tolist()))


@dataclass(eq=False)
class RegistrationResult:
    transform: RigidTransform
    inlier_count: int
    inlier_indices: np.ndarray  # positions within the MatchSet
    converged: bool
    residuals: list = field(default_factory=list)
    n_matches: int = 0


def match(a, b, ratio=None) -> MatchSet:
    """Mutual nearest neighbours in descriptor space (Euclidean, exact).

    With ``ratio`` set, a mutual pair is also required to pass the ratio test
    (best distance < ratio * second best, both directions).
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("cannot match an empty feature set")
    if a.dim != b.dim:
        raise ValueError(f"descriptor dims differ: {a.dim} vs {b.dim}")
    D = cdist(a.descriptors, b.descriptors)
    ab = np.argmin(D, axis=1)
    ba = np.argmin(D, axis=0)
    ia = np.nonzero(ba[ab] == np.arange(len(a)))[0]
    ib = ab[ia]
    if ratio is not None:
        keep = np.ones(ia.size, bool)
        if D.shape[1] > 1:
            second = np.partition(D[ia], 1, axis=1)[:, 1]
            keep &= D[ia, ib] < ratio * second
        if D.shape[0] > 1:
            second = np.partition(D[:, ib], 1, axis=0)[1]
            keep &= D[ia, ib] < ratio * second
        ia, ib = ia[keep], ib[keep]
    return MatchSet(ia, ib, D[ia, ib])


def procrustes(src, dst, weights=None) -> RigidTransform:
    """Least-squares rigid fit mapping ``src`` onto ``dst`` (no reflection)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    cs = w @ src
    cd = w @ dst
    Hm = (src - cs).T @ ((dst - cd) * w[:, None])
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cd - R @ cs)


def _batched_fit(src, dst):
    """Procrustes for a batch of 3-point samples: (m, 3, 3) each."""
    cs = src.mean(axis=1, keepdims=True)
    cd = dst.mean(axis=1, keepdims=True)
    Hm = np.einsum("mki,mkj->mij", src - cs, dst - cd)
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(np.einsum("mji,mkj->mik", Vt, U)))
    d[d == 0] = 1.0
    D = np.zeros((len(src), 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = np.einsum("mji,mjk,mlk->mil", Vt, D, U)
    t = cd[:, 0] - np.einsum("mij,mj->mi", R, cs[:, 0])
    return R, t


def _samples(rng, n, iterations):
    """``iterations`` draws of 3 distinct indices out of ``n``."""
    keys = rng.random((iterations, n))
    return np.argpartition(keys, 2, axis=1)[:, :3]


def estimate_rigid(matches: MatchSet, a, b, inlier_dist=DEFAULT_INLIER_DIST,
                   iterations=DEFAULT_ITERATIONS, seed=0) -> RegistrationResult:
    """RANSAC over 3-match samples; the transform maps ``a``'s points into ``b``'s frame.

    Samples whose points are (nearly) collinear are skipped. Among equal
    consensus sizes the earliest iteration wins. The winning consensus is
    refit with all its inliers.
    """
    n = len(matches)
    if n < 3:
        raise TooFewMatches(f"need at least 3 matches, got {n}")
    pa = a.points[matches.idx_a]
    pb = b.points[matches.idx_b]
    rng = np.random.default_rng(seed)
    samples = _samples(rng, n, int(iterations))
    sa, sb = pa[samples], pb[samples]
    e1 = sa[:, 1] - sa[:, 0]
    e2 = sa[:, 2] - sa[:, 0]
    area = np.linalg.norm(np.cross(e1, e2), axis=1)
    scale = np.maximum(np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
    ok = area > 1e-6 * scale
    if not ok.any():
        raise Degenerate(f"all {iterations} samples were collinear")
    best_count, best_mask = -1, None
    chunk = 256
    for start in range(0, len(samples), chunk):
        sel = np.nonzero(ok[start : start + chunk])[0] + start
        if sel.size == 0:
            continue
        R, t = _batched_fit(sa[sel], sb[sel])
        res = np.linalg.norm(np.einsum("mij,nj->mni", R, pa) + t[:, None, :] - pb[None], axis=2)
        inl = res < inlier_dist
        counts = inl.sum(axis=1)
        k = int(np.argmax(counts))  # first maximum = earliest iteration
        if counts[k] > best_count:
            best_count, best_mask = int(counts[k]), inl[k]
    idx = np.nonzero(best_mask)[0]
    if idx.size >= 3:
        T = procrustes(pa[idx], pb[idx])
    else:
        T = RigidTransform.identity()
    return RegistrationResult(T, int(idx.size), idx, idx.size >= 3, n_matches=n)


def refine_icp(result: RegistrationResult, a_cloud, b_cloud, max_iter=30, corr_dist=1.0,
               tol=1e-6) -> RegistrationResult:
    """Point-to-point ICP starting at ``result.transform``.

    ``a_cloud``/``b_cloud`` may be ordered clouds or (n, 3) arrays. An
    iteration is kept only if it does not raise the mean correspondence
    distance, so the logged residuals never increase.
    """
    pa = a_cloud.valid_points() if isinstance(a_cloud, OrderedPointCloud) else np.asarray(a_cloud)
    pb = b_cloud.valid_points() if isinstance(b_cloud, OrderedPointCloud) else np.asarray(b_cloud)
    if len(pa) == 0 or len(pb) == 0:
        raise NoCorrespondences("empty cloud")
    tree = cKDTree(pb)

    def residual(T):
        d, j = tree.query(T.apply(pa), k=1, distance_upper_bound=corr_dist)
        hit = np.isfinite(d)
        return d, j, hit

    T = result.transform
    d, j, hit = residual(T)
    if not hit.any():
        raise NoCorrespondences(f"no pairs within {corr_dist} m")
    current = float(d[hit].mean())
    log = [current]
    for _ in range(int(max_iter)):
        T_new = procrustes(pa[hit], pb[j[hit]]) if hit.sum() >= 3 else T
        d2, j2, hit2 = residual(T_new)
        if not hit2.any():
            break
        new = float(d2[hit2].mean())
        if new > current:
            break
        T, d, j, hit = T_new, d2, j2, hit2
        log.append(new)
        if current - new < tol:
            current = new
            break
        current = new
    return RegistrationResult(T, result.inlier_count, result.inlier_indices, result.converged,
                              log, result.n_matches)
