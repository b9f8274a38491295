"""Benchmark metrics for feature pairs and trajectories, and report files."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySet, LengthMismatch, LidarFeatError
from .geom import Pose, RigidTransform, rotation_angle
from .register import DEFAULT_ITERATIONS, estimate_rigid, match, procrustes

log = logging.getLogger(__name__)

TAU_1 = 0.3  # keypoint / match distance, metres
TAU_2 = 0.2  # inlier-match ratio a pair must exceed
TAU_3 = 0.3  # registration translation error, metres

# reference runtimes reported for the GPU implementation, milliseconds
REFERENCE_TIMING_MS = {"extract": 22.9, "ransac": 9.5}


def repeatability(a, b, T_gt: RigidTransform, tau1=TAU_1) -> float:
    """Share of ``a``'s keypoints whose nearest ``b`` keypoint is within ``tau1``
    after mapping by ``T_gt``, over ``min(|a|, |b|)``."""
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("repeatability needs two nonempty sets")
    d, _ = cKDTree(b.points).query(T_gt.apply(a.points), k=1)
    return min(1.0, float(np.count_nonzero(d <= tau1)) / min(len(a), len(b)))


def match_inlier_ratio(matches, a, b, T_gt: RigidTransform, tau1=TAU_1):
    """``(ratio, empty)``: share of matches with ``|T_gt p_a - p_b| < tau1``."""
    if len(matches) == 0:
        return 0.0, True
    res = np.linalg.norm(T_gt.apply(a.points[matches.idx_a]) - b.points[matches.idx_b], axis=1)
    return float(np.count_nonzero(res < tau1)) / len(matches), False


def registration_errors(T_est: RigidTransform, T_gt: RigidTransform):
    """(translation metres, rotation degrees) of ``T_gt^-1 T_est``."""
    E = T_gt.inverse() @ T_est
    return float(np.linalg.norm(E.translation)), float(np.degrees(rotation_angle(E.rotation)))


# --- pair sweep ---------------------------------------------------------------


@dataclass
class PairEvaluation:
    anchor: int
    partner: int
    n_a: int = 0
    n_b: int = 0
    n_matches: int = 0
    repeatability: float = 0.0
    inlier_match_ratio: float = 0.0
    registration_translation_error: float = float("inf")
    registration_rotation_error: float = float("inf")
    status: str = "ok"
    # kept for threshold sweeps, not written to the table
    nn_dist: np.ndarray = field(default=None, repr=False)
    match_res: np.ndarray = field(default=None, repr=False)

    def row(self):
        d = asdict(self)
        d.pop("nn_dist")
        d.pop("match_res")
        return d


@dataclass
class BenchmarkReport:
    pairs: list
    thresholds: dict
    timing: dict = field(default_factory=dict)

    @property
    def RS(self) -> float:
        return aggregate(self.pairs, **self.thresholds)["RS"]

    @property
    def MR(self) -> float:
        return aggregate(self.pairs, **self.thresholds)["MR"]

    @property
    def RR(self) -> float:
        return aggregate(self.pairs, **self.thresholds)["RR"]

    def summary(self) -> dict:
        return aggregate(self.pairs, **self.thresholds)

    def sweeps(self, tau1_values=None, tau2_values=None, tau3_values=None) -> dict:
        """RS vs tau1, MR vs tau2, RR vs tau3, recomputed from stored per-pair data."""
        t1 = np.linspace(0.05, 1.0, 20) if tau1_values is None else tau1_values
        t2 = np.linspace(0.0, 0.95, 20) if tau2_values is None else tau2_values
        t3 = np.linspace(0.05, 1.0, 20) if tau3_values is None else tau3_values
        out = {"RS": [], "MR": [], "RR": []}
        for t in t1:
            vals = [
                min(1.0, np.count_nonzero(p.nn_dist <= t) / min(p.n_a, p.n_b)) if p.nn_dist is not None else 0.0
                for p in self.pairs
            ]
            out["RS"].append((float(t), 100.0 * float(np.mean(vals))))
        for t in t2:
            out["MR"].append((float(t), 100.0 * float(np.mean([p.inlier_match_ratio > t for p in self.pairs]))))
        for t in t3:
            out["RR"].append((float(t), 100.0 * float(np.mean(
                [p.registration_translation_error < t for p in self.pairs]))))
        return out

    def to_json(self) -> dict:
        return {"summary": self.summary(), "thresholds": self.thresholds,
                "pairs": [p.row() for p in self.pairs]}

    def write(self, json_path, csv_path=None, timing_path=None) -> None:
        with open(json_path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
        if csv_path is not None:
            write_pair_table(csv_path, self.pairs)
        if timing_path is not None:
            with open(timing_path, "w") as f:
                json.dump({"stages_ms": self.timing, "reference_ms": REFERENCE_TIMING_MS}, f, indent=2)
                f.write("\n")

    def write_sweeps(self, prefix) -> list:
        """One whitespace-separated two-column file per metric, ready for gnuplot."""
        paths = []
        for name, rows in self.sweeps().items():
            path = f"{prefix}_{name}.dat"
            with open(path, "w") as f:
                f.write(f"# threshold {name}_percent\n")
                for t, v in rows:
                    f.write(f"{t!r} {v!r}\n")
            paths.append(path)
        return paths


_COLUMNS = ["anchor", "partner", "n_a", "n_b", "n_matches", "repeatability", "inlier_match_ratio",
            "registration_translation_error", "registration_rotation_error", "status"]


def write_pair_table(path, pairs) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_COLUMNS)
        for p in pairs:
            r = p.row()
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in _COLUMNS])


def read_pair_table(path) -> list:
    out = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            out.append(PairEvaluation(
                int(r["anchor"]), int(r["partner"]), int(r["n_a"]), int(r["n_b"]), int(r["n_matches"]),
                float(r["repeatability"]), float(r["inlier_match_ratio"]),
                float(r["registration_translation_error"]), float(r["registration_rotation_error"]),
                r["status"],
            ))
    return out


def aggregate(pairs, tau1=TAU_1, tau2=TAU_2, tau3=TAU_3) -> dict:
    """RS, MR, RR in percent from per-pair rows alone. Failed pairs count as misses."""
    if not pairs:
        return {"RS": 0.0, "MR": 0.0, "RR": 0.0, "pairs": 0, "failed": 0}
    return {
        "RS": 100.0 * float(np.mean([p.repeatability for p in pairs])),
        "MR": 100.0 * float(np.mean([p.inlier_match_ratio > tau2 for p in pairs])),
        "RR": 100.0 * float(np.mean([p.registration_translation_error < tau3 for p in pairs])),
        "pairs": len(pairs),
        "failed": sum(p.status != "ok" for p in pairs),
    }


def evaluate_pairs(manifest, features, tau1=TAU_1, tau2=TAU_2, tau3=TAU_3,
                   iterations=DEFAULT_ITERATIONS, inlier_dist=TAU_1, seed=0) -> BenchmarkReport:
    """Run matching and registration on every ``(i, j, T_gt)`` of a manifest.

    ``features`` maps a scan index to its FeatureSet (a list, dict, or
    callable). ``T_gt`` maps scan ``i`` into scan ``j``. A failing pair is
    recorded with its error message and never stops the sweep.
    """
    if not manifest:
        raise ValueError("empty manifest")
    get = features if callable(features) else (lambda k: features[k])
    cache = {}
    timing = {"extract": [], "match": [], "ransac": []}

    def feats(k):
        if k not in cache:
            t = time.perf_counter()
            cache[k] = get(k)
            timing["extract"].append(1e3 * (time.perf_counter() - t))
        return cache[k]

    rows = []
    for n, (i, j, T_gt) in enumerate(manifest):
        ev = PairEvaluation(int(i), int(j))
        try:
            a, b = feats(i), feats(j)
            ev.n_a, ev.n_b = len(a), len(b)
            ev.repeatability = repeatability(a, b, T_gt, tau1)
            ev.nn_dist = cKDTree(b.points).query(T_gt.apply(a.points), k=1)[0]
            t = time.perf_counter()
            m = match(a, b)
            timing["match"].append(1e3 * (time.perf_counter() - t))
            ev.n_matches = len(m)
            ev.inlier_match_ratio, _ = match_inlier_ratio(m, a, b, T_gt, tau1)
            t = time.perf_counter()
            res = estimate_rigid(m, a, b, inlier_dist, iterations, [seed, n])
            timing["ransac"].append(1e3 * (time.perf_counter() - t))
            ev.registration_translation_error, ev.registration_rotation_error = registration_errors(
                res.transform, T_gt)
        except LidarFeatError as exc:
            ev.status = f"{type(exc).__name__}: {exc}"
            log.warning("pair %d-%d failed: %s", i, j, exc)
        rows.append(ev)
    stats = {k: {"mean": float(np.mean(v)), "max": float(np.max(v)), "count": len(v)}
             for k, v in timing.items() if v}
    return BenchmarkReport(rows, {"tau1": tau1, "tau2": tau2, "tau3": tau3}, stats)


# --- trajectories ---------------------------------------------------------------


def _as_transform(p):
    return p.transform if isinstance(p, Pose) else p


def trajectory_errors(est, gt):
    """Mean position error (m) and orientation error (deg) after rigid alignment.

    ``est`` is aligned to ``gt`` by the least-squares rigid fit of positions
    before errors are taken.
    """
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimated vs {len(gt)} reference poses")
    if not est:
        raise LengthMismatch("empty trajectories")
    E = [_as_transform(p) for p in est]
    G = [_as_transform(p) for p in gt]
    pe = np.array([T.translation for T in E])
    pg = np.array([T.translation for T in G])
    A = procrustes(pe, pg) if len(E) >= 3 else RigidTransform(np.eye(3), pg.mean(0) - pe.mean(0))
    aligned = [A @ T for T in E]
    t_err = [np.linalg.norm(a.translation - g.translation) for a, g in zip(aligned, G)]
    r_err = [np.degrees(rotation_angle(g.rotation.T @ a.rotation)) for a, g in zip(aligned, G)]
    return float(np.mean(t_err)), float(np.mean(r_err))
