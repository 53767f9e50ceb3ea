"""Dense float64 linear algebra, activations, initialization and a
central finite-difference gradient oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The
functions here add the shape checks and conventions the rest of the
package relies on.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError


class Activation(enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator backed by Philox, a counter-based bit generator.

    Philox output is fixed by (key, counter) and does not depend on the
    platform, so a seed pins every draw made through it.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(m: np.ndarray, act: Activation) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if act is Activation.IDENTITY:
        return m.copy()
    if act is Activation.RELU:
        return np.maximum(m, 0.0)
    if act is Activation.TANH:
        return np.tanh(m)
    if act is Activation.SIGMOID:
        return sigmoid(m)
    raise ValueError(f"unknown activation {act!r}")


def activation_grad(m: np.ndarray, act: Activation) -> np.ndarray:
    """Elementwise derivative evaluated at the pre-activation ``m``.

    The ReLU derivative at exactly zero is taken as 0.
    """
    m = np.asarray(m, dtype=np.float64)
    if act is Activation.IDENTITY:
        return np.ones_like(m)
    if act is Activation.RELU:
        return (m > 0).astype(np.float64)
    if act is Activation.TANH:
        t = np.tanh(m)
        return 1.0 - t * t
    if act is Activation.SIGMOID:
        s = sigmoid(m)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {act!r}")


def xavier_bound(rows: int, cols: int) -> float:
    return float(np.sqrt(6.0 / (rows + cols)))


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Xavier/Glorot initialization on [-sqrt(6/(r+c)), sqrt(6/(r+c))]."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dimensions, got {rows}x{cols}")
    bound = xavier_bound(rows, cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("step size must be positive")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    probe = theta.copy()
    for k in range(theta.size):
        probe[k] = theta[k] + h
        f_plus = f(probe)
        probe[k] = theta[k] - h
        f_minus = f(probe)
        probe[k] = theta[k]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"objective not finite at component {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||), guarded against two zero vectors."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
