"""Loss terms of the joint hashing objective and their analytic gradients.

Relaxed codes are handled column-wise: a matrix of shape (L, n) holds one
code per column. Pairwise functions accept either single codes (1-D) or
matched columns (L x P) and evaluate one loss per column pair.

Gradient formulas use the subgradient convention sign(0) = 0 and
I(margin > 0) strict, which is distinct from the code-generation sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

LOSS_KINDS = ("l1", "l2", "hinge", "contrastive")
DEFAULT_HINGE_MARGIN = 0.5
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class PairwiseLoss:
    """Pairwise similarity loss with its margin.

    ``margin`` is the hinge margin for ``hinge`` (default 0.5) and the
    squared-distance margin for ``contrastive`` (default ``2 * L``,
    resolved once the code length is known).
    """

    kind: str = "l2"
    margin: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind == "hinge" and self.margin is not None and not 0 < self.margin <= 1:
            raise ConfigError("hinge margin must lie in (0, 1]")
        if self.kind == "contrastive" and self.margin is not None and not self.margin > 0:
            raise ConfigError("contrastive margin must be positive")

    def resolved_margin(self, code_length: int) -> float:
        if self.kind == "hinge":
            return DEFAULT_HINGE_MARGIN if self.margin is None else float(self.margin)
        if self.kind == "contrastive":
            return 2.0 * code_length if self.margin is None else float(self.margin)
        return 0.0


@dataclass(frozen=True)
class LossReport:
    pairwise: float
    class_x: float
    class_y: float
    quant: float
    balance: float
    alpha: float
    beta: float
    gamma: float

    @property
    def total(self) -> float:
        return (self.pairwise + self.alpha * (self.class_x + self.class_y)
                + self.beta * self.quant + self.gamma * self.balance)

    def as_dict(self) -> dict:
        return {
            "pairwise": self.pairwise,
            "class_x": self.class_x,
            "class_y": self.class_y,
            "quant": self.quant,
            "balance": self.balance,
            "total": self.total,
        }


def _as_columns(zi, zj):
    zi = np.asarray(zi, dtype=np.float64)
    zj = np.asarray(zj, dtype=np.float64)
    if zi.shape != zj.shape:
        raise ShapeError(f"code shapes differ: {zi.shape} vs {zj.shape}")
    single = zi.ndim == 1
    if single:
        zi, zj = zi[:, None], zj[:, None]
    return zi, zj, single


def code_similarity(zi, zj):
    """Normalized inner product z_i . z_j / L (per column for matrices)."""
    zi, zj, single = _as_columns(zi, zj)
    c = np.einsum("lp,lp->p", zi, zj) / zi.shape[0]
    return float(c[0]) if single else c


def squared_distance(zi, zj):
    zi, zj, single = _as_columns(zi, zj)
    diff = zi - zj
    d = np.einsum("lp,lp->p", diff, diff)
    return float(d[0]) if single else d


def _check_signs(s):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if not np.all(np.abs(s) == 1):
        raise ValueError("similarity labels must be +1 or -1")
    return s


def pairwise_loss(loss: PairwiseLoss, zi, zj, s):
    """Loss value(s) for code pair(s) ``zi``, ``zj`` with similarity ``s``."""
    zi, zj, single = _as_columns(zi, zj)
    s = _check_signs(s)
    code_length = zi.shape[0]
    margin = loss.resolved_margin(code_length)
    if loss.kind == "contrastive":
        d = squared_distance(zi, zj)
        out = np.where(s > 0, d ** 2, np.maximum(0.0, margin - d) ** 2)
    else:
        c = code_similarity(zi, zj)
        if loss.kind == "l1":
            out = np.abs(c - s)
        elif loss.kind == "l2":
            out = 0.5 * (c - s) ** 2
        else:
            phi = (c + 1.0) / 2.0
            out = np.where(s > 0, np.maximum(0.0, margin - phi), phi)
    return float(out[0]) if single else out


def pairwise_loss_grads(loss: PairwiseLoss, zi, zj, s):
    """(d loss / d zi, d loss / d zj), same shapes as the inputs."""
    zi, zj, single = _as_columns(zi, zj)
    s = _check_signs(s)
    code_length = zi.shape[0]
    margin = loss.resolved_margin(code_length)
    if loss.kind == "contrastive":
        d = squared_distance(zi, zj)
        s_pos = (s + 1.0) / 2.0
        active = (margin - d > 0).astype(np.float64)
        coef = 4.0 * (s_pos * d - (1.0 - s_pos) * active * (margin - d))
        gi = coef * (zi - zj)
        gj = -gi
    else:
        c = code_similarity(zi, zj)
        if loss.kind == "l1":
            coef = np.sign(c - s) / code_length
        elif loss.kind == "l2":
            coef = (c - s) / code_length
        else:
            s_pos = (s + 1.0) / 2.0
            active = (margin - (c + 1.0) / 2.0 > 0).astype(np.float64)
            coef = (-s_pos * active + (1.0 - s_pos)) / (2.0 * code_length)
        gi = coef * zj
        gj = coef * zi
    if single:
        return gi[:, 0], gj[:, 0]
    return gi, gj


def l1_grads_as_printed(zi, zj, s):
    """The L1 row exactly as printed in the source derivation:
    (c - s) sign(c - s) z / L, i.e. |c - s| z / L.

    Kept only so the gradient harness can show it disagrees with finite
    differences; never used for training.
    """
    zi, zj, single = _as_columns(zi, zj)
    s = _check_signs(s)
    c = code_similarity(zi, zj)
    coef = (c - s) * np.sign(c - s) / zi.shape[0]
    gi, gj = coef * zj, coef * zi
    if single:
        return gi[:, 0], gj[:, 0]
    return gi, gj


def kink_distance(loss: PairwiseLoss, zi, zj, s):
    """Distance of each pair from the nearest non-differentiable point of
    its loss (inf where the loss is smooth)."""
    zi, zj, single = _as_columns(zi, zj)
    s = _check_signs(s)
    margin = loss.resolved_margin(zi.shape[0])
    c = code_similarity(zi, zj)
    if loss.kind == "l1":
        out = np.abs(c - s)
    elif loss.kind == "l2":
        out = np.full_like(c, np.inf)
    elif loss.kind == "hinge":
        out = np.where(s > 0, np.abs(margin - (c + 1.0) / 2.0), np.inf)
    else:
        d = squared_distance(zi, zj)
        out = np.where(s < 0, np.abs(margin - d), np.inf)
    return float(out[0]) if single else out


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def cross_entropy(class_probs, labels) -> float:
    """Mean multi-label binary cross-entropy over the n columns."""
    p = np.asarray(class_probs, dtype=np.float64)
    g = np.asarray(labels, dtype=np.float64)
    _check_same(p, g, "cross_entropy")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.shape[1]
    return float(-(g * np.log(p) + (1.0 - g) * np.log1p(-p)).sum() / n)


def cross_entropy_grad_preact(class_probs, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the sigmoid
    pre-activation; the sigmoid derivative cancels, leaving (p - g) / n."""
    p = np.asarray(class_probs, dtype=np.float64)
    g = np.asarray(labels, dtype=np.float64)
    _check_same(p, g, "cross_entropy_grad_preact")
    return (p - g) / p.shape[1]


def cross_entropy_delta_as_printed(class_probs, labels) -> np.ndarray:
    """(p - g) / n multiplied by an extra sigmoid derivative p (1 - p), as
    in the printed classification-layer delta. Harness use only."""
    p = np.asarray(class_probs, dtype=np.float64)
    return cross_entropy_grad_preact(p, labels) * p * (1.0 - p)


def quantization_loss(z_x, z_y) -> float:
    z_x = np.asarray(z_x, dtype=np.float64)
    z_y = np.asarray(z_y, dtype=np.float64)
    _check_same(z_x, z_y, "quantization_loss")
    n = z_x.shape[1]
    rx = np.abs(z_x) - 1.0
    ry = np.abs(z_y) - 1.0
    return float(((rx * rx).sum() + (ry * ry).sum()) / (2.0 * n))


def quantization_grad(z) -> np.ndarray:
    """Gradient of this modality's half of the quantization loss."""
    z = np.asarray(z, dtype=np.float64)
    return (np.abs(z) - 1.0) * np.sign(z) / z.shape[1]


def balance_loss(z_x, z_y) -> float:
    z_x = np.asarray(z_x, dtype=np.float64)
    z_y = np.asarray(z_y, dtype=np.float64)
    _check_same(z_x, z_y, "balance_loss")
    n = z_x.shape[1]
    sx = z_x.sum(axis=1)
    sy = z_y.sum(axis=1)
    return float((sx @ sx + sy @ sy) / (2.0 * n))


def balance_grad(z) -> np.ndarray:
    """Every column equals the row sums of ``z`` divided by n."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[1]
    return np.repeat(z.sum(axis=1, keepdims=True) / n, n, axis=1)
