"""Alternating mini-batch SGD over the two modality networks.

Each iteration draws one batch of cross-modal pairs, runs both networks
forward, updates the image network with the text network fixed, then
re-runs the image network and updates the text network on the same
batch.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .data import MultimodalDataset
from .errors import ConfigError, NumericError, ShapeError
from .model import ForwardTrace, NetworkConfig, NetworkParams, build_network, forward
from .numerics import activation_grad, make_rng
from .objective import (
    LossReport,
    PairwiseLoss,
    balance_grad,
    balance_loss,
    cross_entropy,
    cross_entropy_grad_preact,
    pairwise_loss,
    pairwise_loss_grads,
    quantization_grad,
    quantization_loss,
)

log = logging.getLogger(__name__)

MAX_SAMPLING_ROUNDS = 64


@dataclass(frozen=True)
class TrainConfig:
    loss: PairwiseLoss = field(default_factory=lambda: PairwiseLoss("contrastive"))
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    learning_rate: float = 1e-7
    batch_size: int = 128
    iterations: int = 1500
    positive_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("alpha, beta and gamma must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.positive_fraction <= 1:
            raise ConfigError("positive_fraction must lie in [0, 1]")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss"] = {"kind": self.loss.kind, "margin": self.loss.margin}
        return d


PRESETS = {
    "paper": dict(alpha=1.0, beta=0.5, gamma=0.5, learning_rate=1e-5, batch_size=128),
    "desk": dict(alpha=1.0, beta=0.5, gamma=0.5, learning_rate=3e-5, batch_size=128,
                 iterations=1500),
}

# Desk-scale step sizes per pairwise loss. The contrastive loss works on
# squared distances of squared distances, so its gradient is a few orders of
# magnitude larger than the others and needs a much smaller step to avoid
# collapsing every code onto the same vertex.
DESK_LEARNING_RATES = {"l1": 3e-5, "l2": 3e-5, "hinge": 3e-5, "contrastive": 1e-7}


def preset(name: str, **overrides) -> TrainConfig:
    """Named hyper-parameter set; keyword overrides win over the preset.

    For ``desk`` the learning rate follows the chosen loss unless given.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    if name == "desk" and "learning_rate" not in overrides:
        loss = overrides.get("loss") or PairwiseLoss("contrastive")
        values["learning_rate"] = DESK_LEARNING_RATES[loss.kind]
    return TrainConfig(**{**values, **overrides})


class PairSample(NamedTuple):
    i: int
    j: int
    s: int


@dataclass
class PairDraw:
    i: np.ndarray
    j: np.ndarray
    s: np.ndarray
    exhausted: bool

    def samples(self) -> list[PairSample]:
        return [PairSample(int(a), int(b), int(c)) for a, b, c in zip(self.i, self.j, self.s)]


def _draw_pairs(labels: np.ndarray, n: int, frac_pos: float, rng) -> PairDraw:
    labels = np.asarray(labels, dtype=bool)
    n_items = labels.shape[0]
    if n_items == 0:
        raise ShapeError("cannot sample pairs from an empty dataset")
    target = np.where(rng.random(n) < frac_pos, 1, -1)
    if labels.all(axis=0).any() and frac_pos < 1:
        # one class covers every item, so no negative pair exists
        log.warning("every pair shares a label; drawing an all-positive batch")
        target[:] = 1
    pi = np.zeros(n, dtype=np.int64)
    pj = np.zeros(n, dtype=np.int64)
    ps = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    for round_no in range(MAX_SAMPLING_ROUNDS):
        ci = rng.integers(0, n_items, size=todo.size)
        cj = rng.integers(0, n_items, size=todo.size)
        cs = np.where((labels[ci] & labels[cj]).any(axis=1), 1, -1)
        last = round_no == MAX_SAMPLING_ROUNDS - 1
        ok = np.ones(todo.size, dtype=bool) if last else cs == target[todo]
        pi[todo[ok]], pj[todo[ok]], ps[todo[ok]] = ci[ok], cj[ok], cs[ok]
        todo = todo[~ok]
        if todo.size == 0:
            break
    exhausted = bool(np.any(ps != target))
    if exhausted:
        log.warning("pair sampling hit its retry cap; batch polarity is off target")
    return PairDraw(pi, pj, ps, exhausted)


def sample_pair_batch(dataset: MultimodalDataset, n: int, frac_pos: float, rng) -> list[PairSample]:
    """Draw ``n`` (image index, text index, similarity) triples.

    Each slot picks a target polarity with probability ``frac_pos`` and
    rejection-samples index pairs until the label overlap matches, up to a
    fixed retry cap.
    """
    return _draw_pairs(dataset.labels, n, frac_pos, rng).samples()


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


@dataclass(frozen=True)
class GradientOverrides:
    """Substitute formulas used only by the gradient-check harness."""

    pairwise: Callable | None = None
    class_delta: Callable | None = None
    class_path_into_hash: bool = True
    scale: float = 1.0


def _pair_arrays(pairs):
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    arr = np.asarray([tuple(p) for p in pairs], dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2].astype(np.float64)


def objective_report(trace_x: ForwardTrace, trace_y: ForwardTrace, pairs,
                     labels_x, labels_y, tc: TrainConfig) -> LossReport:
    zx, zy = trace_x.relaxed_codes, trace_y.relaxed_codes
    pi, pj, ps = _pair_arrays(pairs)
    pair_total = float(pairwise_loss(tc.loss, zx[:, pi], zy[:, pj], ps).sum()) if ps.size else 0.0
    return LossReport(
        pairwise=pair_total,
        class_x=cross_entropy(trace_x.class_probs, labels_x),
        class_y=cross_entropy(trace_y.class_probs, labels_y),
        quant=quantization_loss(zx, zy),
        balance=balance_loss(zx, zy),
        alpha=tc.alpha,
        beta=tc.beta,
        gamma=tc.gamma,
    )


def backward(trace_x: ForwardTrace, trace_y: ForwardTrace, pairs, labels,
             tc: TrainConfig, target: str, params: NetworkParams, config: NetworkConfig,
             overrides: GradientOverrides | None = None) -> Gradients:
    """Gradients of the full objective for the ``target`` modality ('x' or 'y').

    ``pairs`` index columns of the two batches (i into the image batch, j
    into the text batch); ``labels`` is the C x n label block of the target
    batch. ``params`` and ``config`` describe the target network.
    """
    if target not in ("x", "y"):
        raise ValueError("target must be 'x' or 'y'")
    ov = overrides or GradientOverrides()
    own, other = (trace_x, trace_y) if target == "x" else (trace_y, trace_x)
    params.check_against(config)
    if len(own.pre_activations) != config.num_layers or any(
        a.shape[0] != w.shape[0] for a, w in zip(own.pre_activations, params.weights)
    ):
        raise ShapeError("forward trace does not match the target network's parameters")

    z_own = own.relaxed_codes
    d_hash = np.zeros_like(z_own)

    pi, pj, ps = _pair_arrays(pairs)
    if ps.size:
        pair_grad = ov.pairwise or (lambda zi, zj, s: pairwise_loss_grads(tc.loss, zi, zj, s))
        gi, gj = pair_grad(trace_x.relaxed_codes[:, pi], trace_y.relaxed_codes[:, pj], ps)
        if target == "x":
            np.add.at(d_hash.T, pi, gi.T)
        else:
            np.add.at(d_hash.T, pj, gj.T)
    if tc.beta:
        d_hash += tc.beta * quantization_grad(z_own)
    if tc.gamma:
        d_hash += tc.gamma * balance_grad(z_own)

    class_delta = ov.class_delta or cross_entropy_grad_preact
    deltas = [None] * config.num_layers
    deltas[-1] = tc.alpha * class_delta(own.class_probs, labels)

    upstream = params.weights[-1].T @ deltas[-1] if ov.class_path_into_hash else 0.0
    for m in range(config.num_layers - 2, -1, -1):
        if m == config.hash_index:
            upstream = upstream + d_hash
        deltas[m] = upstream * activation_grad(own.pre_activations[m], config.layers[m].activation)
        upstream = params.weights[m].T @ deltas[m]

    grads_w = [ov.scale * (deltas[m] @ own.post_activations[m].T) for m in range(config.num_layers)]
    grads_b = [ov.scale * deltas[m].sum(axis=1) for m in range(config.num_layers)]
    return Gradients(grads_w, grads_b)


def sgd_step(params: NetworkParams, grads: Gradients, learning_rate: float,
             config: NetworkConfig, iteration: int | None = None) -> NetworkParams:
    """Plain SGD with each layer's learning-rate multiplier."""
    weights, biases = [], []
    for m, (layer, w, b, gw, gb) in enumerate(
        zip(config.layers, params.weights, params.biases, grads.weights, grads.biases)
    ):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"layer {m}: gradient shape does not match parameters")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise NumericError(f"non-finite gradient in layer {m}{where}")
        step = learning_rate * layer.lr_multiplier
        weights.append(w - step * gw)
        biases.append(b - step * gb)
    return NetworkParams(weights, biases)


@dataclass
class TrainLog:
    reports: list[LossReport] = field(default_factory=list)
    wall_time: float = 0.0
    checksum_x: str = ""
    checksum_y: str = ""
    off_target_batches: int = 0

    def mean_total(self, start: int, stop: int) -> float:
        return float(np.mean([r.total for r in self.reports[start:stop]]))


def train(dataset: MultimodalDataset, configs: tuple[NetworkConfig, NetworkConfig],
          tc: TrainConfig, rng=None, train_indices=None,
          on_iteration: Callable[[int, LossReport], None] | None = None):
    """Learn both networks; returns (params_x, params_y, TrainLog)."""
    cx, cy = configs
    if dataset.n == 0:
        raise ShapeError("training set is empty")
    if cx.in_dim != dataset.d_x or cy.in_dim != dataset.d_y:
        raise ShapeError(
            f"network input dims ({cx.in_dim}, {cy.in_dim}) do not match "
            f"dataset dims ({dataset.d_x}, {dataset.d_y})"
        )
    if cx.num_classes != dataset.num_classes or cy.num_classes != dataset.num_classes:
        raise ShapeError(f"networks predict {cx.num_classes}/{cy.num_classes} classes, "
                         f"dataset has {dataset.num_classes}")
    if cx.code_length != cy.code_length:
        raise ShapeError("the two networks must share a code length")
    rng = make_rng(tc.seed) if rng is None else rng
    if train_indices is not None:
        dataset = dataset.subset(train_indices)

    x_all = dataset.x_features.astype(np.float64)
    y_all = dataset.y_features.astype(np.float64)
    g_all = dataset.labels.astype(np.float64)

    px = build_network(cx, rng)
    py = build_network(cy, rng)
    tlog = TrainLog()
    started = time.perf_counter()
    for it in range(tc.iterations):
        draw = _draw_pairs(dataset.labels, tc.batch_size, tc.positive_fraction, rng)
        tlog.off_target_batches += draw.exhausted
        xb, yb = x_all[draw.i].T, y_all[draw.j].T
        gx, gy = g_all[draw.i].T, g_all[draw.j].T
        # column k of each batch belongs to pair k
        batch_pairs = [PairSample(k, k, int(s)) for k, s in enumerate(draw.s)]

        tx = forward(px, cx, xb)
        ty = forward(py, cy, yb)
        report = objective_report(tx, ty, batch_pairs, gx, gy, tc)
        if not np.isfinite(report.total):
            raise NumericError(f"objective is not finite at iteration {it}")
        tlog.reports.append(report)
        if on_iteration is not None:
            on_iteration(it, report)

        grads = backward(tx, ty, batch_pairs, gx, tc, "x", px, cx)
        px = sgd_step(px, grads, tc.learning_rate, cx, it)
        tx = forward(px, cx, xb)
        grads = backward(tx, ty, batch_pairs, gy, tc, "y", py, cy)
        py = sgd_step(py, grads, tc.learning_rate, cy, it)

    tlog.wall_time = time.perf_counter() - started
    tlog.checksum_x = px.checksum()
    tlog.checksum_y = py.checksum()
    return px, py, tlog


def log_records(tc: TrainConfig, tlog: TrainLog, preset_name: str | None = None,
                extra: dict | None = None) -> list[str]:
    """Line-delimited JSON: a header, one record per iteration, a footer."""
    header = {"record": "header", "preset": preset_name, "config": tc.as_dict()}
    if extra:
        header.update(extra)
    lines = [json.dumps(header, sort_keys=True)]
    for it, r in enumerate(tlog.reports):
        lines.append(json.dumps({"iteration": it, **r.as_dict()}))
    lines.append(json.dumps({
        "record": "footer",
        "wall_time": tlog.wall_time,
        "checksum_x": tlog.checksum_x,
        "checksum_y": tlog.checksum_y,
        "off_target_batches": tlog.off_target_batches,
    }))
    return lines
