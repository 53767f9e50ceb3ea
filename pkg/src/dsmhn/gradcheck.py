"""Finite-difference check of the backprop gradients on tiny networks.

Besides the implemented formulas, the harness can swap in the gradient
expressions as originally printed (``printed_l1``, ``printed_class_delta``,
``printed_hash_delta``) to show that they disagree with central
differences, and a deliberately scaled gradient (``corrupt``) as a
self-test of the harness itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LayerSpec, NetworkConfig, build_network, forward
from .numerics import Activation, finite_diff_grad, make_rng, relative_error
from .objective import (
    LOSS_KINDS,
    PairwiseLoss,
    cross_entropy_delta_as_printed,
    kink_distance,
    l1_grads_as_printed,
)
from .trainer import GradientOverrides, PairSample, TrainConfig, backward, objective_report

TOLERANCE = 1e-4
STEP = 1e-5
VARIANTS = ("exact", "printed_l1", "printed_class_delta", "printed_hash_delta", "corrupt")


@dataclass(frozen=True)
class TinyDims:
    d_x: int = 6
    d_y: int = 5
    hidden: int = 8
    code_length: int = 4
    num_classes: int = 3
    batch: int = 4


@dataclass
class TensorCheck:
    name: str
    rel_error: float


@dataclass
class GradcheckResult:
    loss_kind: str
    variant: str
    checks: list[TensorCheck]
    tolerance: float
    attempts: int

    @property
    def max_rel_error(self) -> float:
        return max(c.rel_error for c in self.checks)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} loss={self.loss_kind} variant={self.variant} "
                f"max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e}")


def tiny_config(d_in: int, dims: TinyDims) -> NetworkConfig:
    layers = (
        LayerSpec(d_in, dims.hidden, Activation.RELU),
        LayerSpec(dims.hidden, dims.hidden, Activation.RELU),
        LayerSpec(dims.hidden, dims.code_length, Activation.TANH),
        LayerSpec(dims.code_length, dims.num_classes, Activation.SIGMOID),
    )
    return NetworkConfig(layers, dims.code_length, dims.num_classes)


def _overrides(variant: str, loss_kind: str) -> GradientOverrides | None:
    if variant == "exact":
        return None
    if variant == "printed_l1":
        if loss_kind != "l1":
            raise ValueError("printed_l1 applies to the l1 loss only")
        return GradientOverrides(pairwise=l1_grads_as_printed)
    if variant == "printed_class_delta":
        return GradientOverrides(class_delta=cross_entropy_delta_as_printed)
    if variant == "printed_hash_delta":
        return GradientOverrides(class_path_into_hash=False)
    if variant == "corrupt":
        return GradientOverrides(scale=1.01)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _instance(rng, dims: TinyDims, loss: PairwiseLoss):
    cx, cy = tiny_config(dims.d_x, dims), tiny_config(dims.d_y, dims)
    px, py = build_network(cx, rng), build_network(cy, rng)
    # nonzero biases so the bias gradients are exercised away from init
    for p in (px, py):
        p.biases = [rng.uniform(-0.3, 0.3, size=b.shape) for b in p.biases]
    n = dims.batch
    xb = rng.standard_normal((dims.d_x, n)) * 1.5
    yb = rng.standard_normal((dims.d_y, n)) * 1.5
    labels_x = (rng.random((dims.num_classes, n)) < 0.4).astype(np.float64)
    labels_y = (rng.random((dims.num_classes, n)) < 0.4).astype(np.float64)
    labels_x[rng.integers(0, dims.num_classes, n), np.arange(n)] = 1.0
    labels_y[rng.integers(0, dims.num_classes, n), np.arange(n)] = 1.0
    # n pairs over the batch columns, including off-diagonal ones so some
    # columns are touched by several pairs
    pi = np.concatenate([np.arange(n // 2), rng.integers(0, n, n - n // 2)])
    pj = rng.permutation(n)
    s = np.where((labels_x[:, pi] * labels_y[:, pj]).sum(axis=0) > 0, 1, -1)
    s[0], s[-1] = 1, -1
    pairs = [PairSample(int(a), int(b), int(c)) for a, b, c in zip(pi, pj, s)]
    return cx, cy, px, py, xb, yb, labels_x, labels_y, pairs


def _near_kink(loss, tx, ty, pairs, cx, cy) -> bool:
    pi = np.array([p.i for p in pairs])
    pj = np.array([p.j for p in pairs])
    s = np.array([p.s for p in pairs], dtype=np.float64)
    if np.min(kink_distance(loss, tx.relaxed_codes[:, pi], ty.relaxed_codes[:, pj], s)) < 1e-3:
        return True
    for trace, cfg in ((tx, cx), (ty, cy)):
        if np.min(np.abs(trace.relaxed_codes)) < 1e-3:
            return True
        for a, layer in zip(trace.pre_activations, cfg.layers):
            if layer.activation is Activation.RELU and np.min(np.abs(a)) < 1e-4:
                return True
    return False


def run_gradcheck(loss_kind: str, seed: int = 0, dims: TinyDims = TinyDims(),
                  alpha: float = 1.0, beta: float = 0.5, gamma: float = 0.5,
                  variant: str = "exact", tolerance: float = TOLERANCE,
                  step: float = STEP, max_attempts: int = 200) -> GradcheckResult:
    """Compare backprop against central differences for every parameter
    tensor of both networks; relative error is measured per tensor."""
    loss = PairwiseLoss(loss_kind)
    tc = TrainConfig(loss=loss, alpha=alpha, beta=beta, gamma=gamma)
    overrides = _overrides(variant, loss_kind)
    rng = make_rng(seed)
    for attempt in range(1, max_attempts + 1):
        cx, cy, px, py, xb, yb, gx, gy, pairs = _instance(rng, dims, loss)
        tx, ty = forward(px, cx, xb), forward(py, cy, yb)
        if not _near_kink(loss, tx, ty, pairs, cx, cy):
            break
    else:
        raise RuntimeError("could not draw an instance away from the loss kinks")

    grad_x = backward(tx, ty, pairs, gx, tc, "x", px, cx, overrides)
    grad_y = backward(tx, ty, pairs, gy, tc, "y", py, cy, overrides)

    n_x = px.flatten().size
    theta = np.concatenate([px.flatten(), py.flatten()])

    def objective(t):
        qx, qy = px.unflatten(t[:n_x]), py.unflatten(t[n_x:])
        return objective_report(forward(qx, cx, xb), forward(qy, cy, yb), pairs, gx, gy, tc).total

    numeric = finite_diff_grad(objective, theta, step)
    num_x = px.unflatten(numeric[:n_x])
    num_y = py.unflatten(numeric[n_x:])

    checks = []
    for tag, analytic, num in (("x", grad_x, num_x), ("y", grad_y, num_y)):
        for m in range(len(analytic.weights)):
            checks.append(TensorCheck(f"{tag}.W{m + 1}", relative_error(analytic.weights[m], num.weights[m])))
            checks.append(TensorCheck(f"{tag}.c{m + 1}", relative_error(analytic.biases[m], num.biases[m])))
    return GradcheckResult(loss_kind, variant, checks, tolerance, attempt)


def run_all(seed: int = 0, dims: TinyDims = TinyDims(), **kwargs) -> list[GradcheckResult]:
    return [run_gradcheck(kind, seed=seed, dims=dims, **kwargs) for kind in LOSS_KINDS]
