"""Momentum-SGD training loop with a two-stage augmentation schedule."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import Divergence, NoValidCorrespondences
from . import network
from .data import AugmentConfig, TrainSample, augment, crop_pair
from .objective import LossBreakdown, pair_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule.

    ``epochs`` lists epochs per stage. Stage 1 adds only noise; later stages
    add the offset and scale perturbations as well. ``max_steps`` (if set)
    stops training after that many optimizer steps overall.
    """

    epochs: tuple = (3, 20)
    lr: float = 1e-3
    momentum: float = 0.9
    max_steps: int | None = None
    seed: int = 0
    crop: tuple = (64, 180)
    noise_var: float = 0.04
    offset: float = 0.1
    scale: float = 0.1
    divergence_factor: float = 10.0

    def stage_augment(self, stage: int) -> AugmentConfig:
        if stage == 0:
            return AugmentConfig.noise_only(self.noise_var)
        return AugmentConfig(self.noise_var, self.offset, self.scale)


@dataclass
class TrainResult:
    weights: dict
    curve: list = field(default_factory=list)  # (step, LossBreakdown)
    stages: list = field(default_factory=list)  # (stage, first_step, last_step)

    def write_curve(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "total", "repeat", "peaky", "reliab"])
            for step, b in self.curve:
                w.writerow([step] + [repr(float(x)) for x in b.as_row()])


def sample_gradients(sample: TrainSample, config, weights):
    """Loss breakdown and weight gradients for one (already prepared) pair."""
    xa, xb = sample.image_a, sample.image_b
    da, ra, pa, ca = network.forward(xa.data, config, weights, keep_cache=True)
    db, rb, pb, cb = network.forward(xb.data, config, weights, keep_cache=True)
    br, ga, gb = pair_loss((da, ra, pa), (db, rb, pb), sample.flow.target, sample.flow.valid,
                           xa.valid, xb.valid, config)
    g1 = network.backward(ca, config, weights, *ga)
    g2 = network.backward(cb, config, weights, *gb)
    return br, {k: g1[k] + g2[k] for k in g1}


def evaluate(samples, config, weights) -> float:
    """Mean total loss over samples without augmentation."""
    vals = []
    for s in samples:
        da, ra, pa, _ = network.forward(s.image_a.data, config, weights)
        db, rb, pb, _ = network.forward(s.image_b.data, config, weights)
        br, _, _ = pair_loss((da, ra, pa), (db, rb, pb), s.flow.target, s.flow.valid,
                             s.image_a.valid, s.image_b.valid, config)
        vals.append(br.total)
    return float(np.mean(vals))


def _mean_breakdown(items):
    arr = np.array([b.as_row() for b in items])
    return LossBreakdown(*[float(x) for x in arr.mean(axis=0)])


def train(samples, config, weights, tcfg: TrainConfig = TrainConfig(), later_samples=()) -> TrainResult:
    """Train on a list of full-size samples; returns new weights and the loss curve.

    Stage 1 draws from ``samples`` only; later stages draw from ``samples``
    plus ``later_samples`` (e.g. synthetic pairs first, then real pairs too).

    Every step draws ``config.batch_size`` samples from a per-epoch
    permutation, crops and augments them, and averages their gradients.
    Raises :class:`Divergence` when a step loss exceeds
    ``divergence_factor`` times the first step loss.
    """
    samples = list(samples)
    later = samples + list(later_samples)
    if not samples:
        raise ValueError("training needs at least one sample")
    rng = np.random.default_rng(tcfg.seed)
    w = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    network.check_weights(config, w)
    vel = {k: np.zeros_like(v) for k, v in w.items()}
    result = TrainResult(w)
    step = 0
    initial = None
    bs = max(1, config.batch_size)
    for stage, n_epochs in enumerate(tcfg.epochs):
        aug = tcfg.stage_augment(stage)
        pool = samples if stage == 0 else later
        first = step
        for _ in range(int(n_epochs)):
            order = rng.permutation(len(pool))
            for b0 in range(0, len(order), bs):
                if tcfg.max_steps is not None and step >= tcfg.max_steps:
                    break
                parts, grads = [], None
                for idx in order[b0 : b0 + bs]:
                    s = augment(crop_pair(pool[idx], rng, tcfg.crop), rng, aug)
                    try:
                        br, g = sample_gradients(s, config, w)
                    except NoValidCorrespondences:
                        continue
                    parts.append(br)
                    grads = g if grads is None else {k: grads[k] + g[k] for k in g}
                if not parts:
                    continue
                br = _mean_breakdown(parts)
                if not np.isfinite(br.total):
                    raise Divergence(step, br.total, initial if initial is not None else br.total)
                if initial is None:
                    initial = br.total
                elif br.total > tcfg.divergence_factor * initial:
                    raise Divergence(step, br.total, initial)
                for k in w:
                    vel[k] = tcfg.momentum * vel[k] - tcfg.lr * grads[k] / len(parts)
                    w[k] += vel[k]
                result.curve.append((step, br))
                step += 1
        result.stages.append((stage, first, step - 1))
        log.info("stage %d finished at step %d", stage, step)
    return result
