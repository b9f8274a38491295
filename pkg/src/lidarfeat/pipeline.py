"""Glue between modules: scans to features, features to trajectories."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import LidarFeatError
from .extract import DEFAULT_NMS_RADIUS, DEFAULT_SCORE_THRESHOLD, FeatureSet, extract
from .featnet import network
from .featnet.data import DatasetStats, normalize
from .featnet.handcrafted import HandcraftedConfig, handcrafted_maps
from .geom import OrderedPointCloud
from .mapping import (
    DEFAULT_HIST_THRESHOLD,
    DEFAULT_MIN_GAP,
    DEFAULT_MIN_INLIERS,
    DEFAULT_WORDS,
    PoseGraph,
    build_graph,
    build_vocabulary,
    histogram,
    optimize,
    propose_loops,
)
from .projection import to_scan_image
from .register import DEFAULT_INLIER_DIST, DEFAULT_ITERATIONS, estimate_rigid, match, refine_icp

log = logging.getLogger(__name__)


@dataclass
class FeatureModel:
    """Either trained network weights (with dataset stats) or the handcrafted stub."""

    kind: str = "handcrafted"
    config: object = None
    weights: dict | None = None
    stats: DatasetStats | None = None

    def maps(self, cloud: OrderedPointCloud):
        image = to_scan_image(cloud)
        if self.kind == "handcrafted":
            return handcrafted_maps(image, self.config or HandcraftedConfig())
        x = normalize(image, self.stats)
        return network.dense_maps(x.data, self.config, self.weights)


def scan_features(cloud, model: FeatureModel, score_threshold=DEFAULT_SCORE_THRESHOLD,
                  nms_radius=DEFAULT_NMS_RADIUS) -> FeatureSet:
    return extract(model.maps(cloud), cloud, score_threshold, nms_radius)


@dataclass(frozen=True)
class SlamConfig:
    inlier_dist: float = DEFAULT_INLIER_DIST
    iterations: int = DEFAULT_ITERATIONS
    words: int = DEFAULT_WORDS
    hist_threshold: float = DEFAULT_HIST_THRESHOLD
    min_gap: int = DEFAULT_MIN_GAP
    min_inliers: int = DEFAULT_MIN_INLIERS
    lm_max_iter: int = 100
    lm_lambda: float = 1e-3
    icp_iterations: int = 0
    icp_corr_dist: float = 0.5
    icp_stride: int = 4
    seed: int = 0


@dataclass
class SlamResult:
    odometry_nodes: list
    nodes: list
    graph: PoseGraph
    proposals: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    lm_log: object = None


def register_pair(fa: FeatureSet, fb: FeatureSet, cfg: SlamConfig, seed, clouds=None):
    """Registration mapping ``fa``'s frame into ``fb``'s frame.

    With ``cfg.icp_iterations`` > 0 and ``clouds = (cloud_a, cloud_b)`` the
    RANSAC estimate is refined by ICP on every ``icp_stride``-th point of a.
    """
    m = match(fa, fb)
    res = estimate_rigid(m, fa, fb, cfg.inlier_dist, cfg.iterations, seed)
    if cfg.icp_iterations > 0 and clouds is not None and res.converged:
        pa = clouds[0].valid_points()[:: max(1, cfg.icp_stride)]
        res = refine_icp(res, pa, clouds[1].valid_points(), cfg.icp_iterations, cfg.icp_corr_dist)
    return res


def slam(features, cfg: SlamConfig = SlamConfig(), loop_closure=True, clouds=None) -> SlamResult:
    """Odometry by chained registration, optionally closed with verified BoVW loops.

    ``clouds`` (index-aligned with ``features``) enables ICP refinement when
    the config asks for it.
    """
    pair = (lambda i, j: (clouds[i], clouds[j])) if clouds is not None else (lambda i, j: None)
    odo = []
    for i in range(len(features) - 1):
        try:
            odo.append(register_pair(features[i + 1], features[i], cfg, [cfg.seed, i], pair(i + 1, i)))
        except LidarFeatError as exc:
            log.warning("odometry %d -> %d failed: %s", i, i + 1, exc)
            odo.append(None)
    graph = build_graph(odo)
    odometry_nodes = list(graph.nodes)
    if not loop_closure:
        return SlamResult(odometry_nodes, odometry_nodes, graph)
    pooled = np.concatenate([f.descriptors for f in features if len(f)])
    vocab = build_vocabulary(pooled, cfg.words, cfg.seed)
    hists = [histogram(f, vocab) for f in features]
    proposals = propose_loops(hists, cfg.hist_threshold, cfg.min_gap)
    loops = []
    for i, j in proposals:
        try:
            loops.append((i, j, register_pair(features[j], features[i], cfg, [cfg.seed, i, j], pair(j, i))))
        except LidarFeatError as exc:
            log.info("loop %d-%d rejected: %s", i, j, exc)
    graph = build_graph(odo, loops, cfg.min_inliers)
    log.info("%d loop proposals, %d verified", len(proposals), len(graph.loop_edges))
    opt, lm_log = optimize(graph, cfg.lm_max_iter, cfg.lm_lambda)
    return SlamResult(odometry_nodes, opt.nodes, opt, proposals, graph.loop_edges, lm_log)
