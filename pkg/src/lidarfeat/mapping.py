"""Odometry chaining, bag-of-words loop proposals and pose-graph optimization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import BrokenChain, FormatError, SingularSystem, TooFewDescriptors
from .geom import RigidTransform, se3_log, so3_exp

log = logging.getLogger(__name__)

DEFAULT_WORDS = 180
DEFAULT_HIST_THRESHOLD = 0.8
DEFAULT_MIN_GAP = 10
DEFAULT_MIN_INLIERS = 15


# --- vocabulary and histograms ---------------------------------------------


@dataclass(frozen=True, eq=False)
class Vocabulary:
    centroids: np.ndarray
    inertia: float = 0.0
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, descriptors) -> np.ndarray:
        return np.argmin(cdist(np.asarray(descriptors, dtype=np.float64), self.centroids), axis=1)


def _kmeans_pp(X, k, rng):
    centres = [int(rng.integers(len(X)))]
    d2 = ((X - X[centres[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise TooFewDescriptors(f"fewer than {k} distinct descriptors")
        c = int(rng.choice(len(X), p=d2 / total))
        centres.append(c)
        d2 = np.minimum(d2, ((X - X[c]) ** 2).sum(axis=1))
    return X[centres].copy()


def build_vocabulary(descriptors, k=DEFAULT_WORDS, seed=0, max_iter=100) -> Vocabulary:
    """Lloyd's k-means with k-means++ seeding.

    Stops when assignments stop changing or after ``max_iter`` rounds. A
    cluster that loses all its members keeps its previous centroid.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if k < 2:
        raise ValueError("vocabulary needs k >= 2")
    if len(X) < k:
        raise TooFewDescriptors(f"{len(X)} descriptors for {k} words")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, k, rng)
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(cdist(X, C), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=k)
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]
    inertia = float(((X - C[labels]) ** 2).sum())
    return Vocabulary(C, inertia, it)


@dataclass(frozen=True, eq=False)
class BowHistogram:
    weights: np.ndarray
    empty: bool = False


def histogram(features, vocab: Vocabulary) -> BowHistogram:
    """Word counts of a feature set, L2-normalized; all-zero and flagged when empty."""
    if len(features) == 0:
        return BowHistogram(np.zeros(vocab.k), True)
    if features.dim != vocab.centroids.shape[1]:
        raise ValueError("descriptor dimension differs from the vocabulary")
    counts = np.bincount(vocab.assign(features.descriptors), minlength=vocab.k).astype(np.float64)
    return BowHistogram(counts / np.linalg.norm(counts))


def propose_loops(histograms, threshold=DEFAULT_HIST_THRESHOLD, min_gap=DEFAULT_MIN_GAP):
    """All ``(i, j)`` with ``j - i >= min_gap`` whose histogram distance is below ``threshold``."""
    if not histograms:
        return []
    Hm = np.array([h.weights for h in histograms])
    empty = np.array([h.empty for h in histograms])
    D = cdist(Hm, Hm)
    out = []
    n = len(histograms)
    for i in range(n):
        if empty[i]:
            continue
        for j in range(i + min_gap, n):
            if not empty[j] and D[i, j] < threshold:
                out.append((i, j))
    return out


# --- pose graph -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Edge:
    i: int
    j: int
    constraint: RigidTransform  # maps frame j into frame i
    kind: str = "odometry"
    weight: float = 1.0


@dataclass(eq=False)
class PoseGraph:
    nodes: list
    edges: list = field(default_factory=list)
    dropped_loops: int = 0

    def __post_init__(self):
        n = len(self.nodes)
        for e in self.edges:
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise ValueError(f"edge ({e.i}, {e.j}) out of range for {n} nodes")

    def residuals(self, nodes=None):
        nodes = self.nodes if nodes is None else nodes
        return [edge_residual(nodes[e.i], nodes[e.j], e.constraint) for e in self.edges]

    def cost(self, nodes=None) -> float:
        nodes = self.nodes if nodes is None else nodes
        return float(sum(e.weight * (r @ r) for e, r in zip(self.edges, self.residuals(nodes))))

    @property
    def loop_edges(self):
        return [e for e in self.edges if e.kind == "loop"]


def edge_residual(Pi: RigidTransform, Pj: RigidTransform, C: RigidTransform) -> np.ndarray:
    """SE(3) log of ``C^-1 (Pi^-1 Pj)``."""
    return se3_log(C.inverse() @ (Pi.inverse() @ Pj))


def build_graph(odometry, loops=(), min_inliers=DEFAULT_MIN_INLIERS) -> PoseGraph:
    """Chain odometry into initial poses and add verified loop edges.

    ``odometry[i]`` is the registration mapping scan ``i+1`` into scan ``i``.
    ``loops`` holds ``(i, j, result)`` with ``result`` mapping scan ``j`` into
    scan ``i``; those that did not converge or have fewer than
    ``min_inliers`` inliers are dropped and counted.
    """
    nodes = [RigidTransform.identity()]
    edges = []
    for i, res in enumerate(odometry):
        if res is None or not getattr(res, "converged", True):
            raise BrokenChain(f"odometry step {i} -> {i + 1} is missing")
        T = res.transform if hasattr(res, "transform") else res
        nodes.append(nodes[-1] @ T)
        edges.append(Edge(i, i + 1, T, "odometry"))
    dropped = 0
    for i, j, res in loops:
        ok = getattr(res, "converged", True) and getattr(res, "inlier_count", min_inliers) >= min_inliers
        if not ok:
            dropped += 1
            continue
        edges.append(Edge(int(i), int(j), res.transform if hasattr(res, "transform") else res, "loop"))
    return PoseGraph(nodes, edges, dropped)


def _perturb(T: RigidTransform, d):
    return RigidTransform(T.rotation @ so3_exp(d[:3]), T.translation + d[3:])


@dataclass
class OptimizeLog:
    costs: list = field(default_factory=list)  # cost after each accepted step (first = initial)
    iterations: int = 0
    accepted: int = 0
    reason: str = ""


def _jacobian(graph, nodes, eps=1e-6):
    """Residual vector and dense Jacobian w.r.t. every node except node 0."""
    n = len(nodes)
    m = len(graph.edges)
    J = np.zeros((6 * m, 6 * (n - 1)))
    r = np.zeros(6 * m)
    for k, e in enumerate(graph.edges):
        sw = np.sqrt(e.weight)
        Pi, Pj, C = nodes[e.i], nodes[e.j], e.constraint
        r[6 * k : 6 * k + 6] = sw * edge_residual(Pi, Pj, C)
        for node, which in ((e.i, 0), (e.j, 1)):
            if node == 0:
                continue
            col = 6 * (node - 1)
            for a in range(6):
                d = np.zeros(6)
                d[a] = eps
                if which == 0:
                    rp = edge_residual(_perturb(Pi, d), Pj, C)
                    rm = edge_residual(_perturb(Pi, -d), Pj, C)
                else:
                    rp = edge_residual(Pi, _perturb(Pj, d), C)
                    rm = edge_residual(Pi, _perturb(Pj, -d), C)
                J[6 * k : 6 * k + 6, col + a] += sw * (rp - rm) / (2 * eps)
    return r, J


def optimize(graph: PoseGraph, max_iter=100, lambda_init=1e-3):
    """Levenberg-Marquardt over all nodes but the first (the gauge).

    Each free node gets a local 6-dof increment (rotation vector applied on
    the right, translation added). Returns ``(new_graph, OptimizeLog)``.
    """
    nodes = list(graph.nodes)
    out = OptimizeLog()
    cost = graph.cost(nodes)
    out.costs.append(cost)
    if len(nodes) < 2 or not graph.edges:
        out.reason = "nothing to optimize"
        return replace(graph, nodes=nodes), out
    lam = float(lambda_init)
    for it in range(int(max_iter)):
        out.iterations = it + 1
        r, J = _jacobian(graph, nodes)
        g = J.T @ r
        if np.linalg.norm(g) < 1e-8:
            out.reason = "gradient"
            break
        Hm = J.T @ J
        step = None
        while lam < 1e16:
            A = Hm + lam * np.diag(np.diag(Hm))
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(str(exc)) from exc
            if not np.all(np.isfinite(delta)):
                raise SingularSystem("non-finite step")
            trial = [nodes[0]] + [_perturb(P, delta[6 * (k - 1) : 6 * k]) for k, P in enumerate(nodes) if k > 0]
            new_cost = graph.cost(trial)
            if new_cost < cost:
                nodes, cost, step = trial, new_cost, delta
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if step is None:
            out.reason = "no decrease"
            break
        out.accepted += 1
        out.costs.append(cost)
        if np.linalg.norm(step) < 1e-10:
            out.reason = "step"
            break
    else:
        out.reason = "max_iter"
    return replace(graph, nodes=nodes), out


# --- g2o files ----------------------------------------------------------------


def _fmt(T: RigidTransform):
    return " ".join(repr(float(v)) for v in (*T.translation, *T.quaternion()))


def write_g2o(path, graph: PoseGraph) -> None:
    lines = [f"VERTEX_SE3:QUAT {k} {_fmt(T)}" for k, T in enumerate(graph.nodes)]
    iu = np.triu_indices(6)
    for e in graph.edges:
        info = " ".join(repr(float(v)) for v in (e.weight * np.eye(6))[iu])
        lines.append(f"EDGE_SE3:QUAT {e.i} {e.j} {_fmt(e.constraint)} {info}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_g2o(path) -> PoseGraph:
    """Read vertices and edges; an edge (i, i+1) is odometry, anything else a loop."""
    verts = {}
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "VERTEX_SE3:QUAT" and len(parts) == 9:
                v = [float(x) for x in parts[2:]]
                verts[int(parts[1])] = RigidTransform.from_quaternion(v[3:], v[:3])
            elif parts[0] == "EDGE_SE3:QUAT" and len(parts) == 31:
                i, j = int(parts[1]), int(parts[2])
                v = [float(x) for x in parts[3:10]]
                w = float(parts[10])
                kind = "odometry" if j == i + 1 else "loop"
                edges.append(Edge(i, j, RigidTransform.from_quaternion(v[3:], v[:3]), kind, w))
            else:
                raise FormatError(f"{path}:{lineno}: unrecognised record")
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if sorted(verts) != list(range(len(verts))):
        raise FormatError(f"{path}: vertex ids must be 0..n-1")
    return PoseGraph([verts[k] for k in range(len(verts))], edges)
