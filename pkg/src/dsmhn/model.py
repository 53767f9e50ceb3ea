"""Modality networks: layer stacks, parameters, forward pass, checkpoints."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .fileio import atomic_write
from .numerics import Activation, apply_activation, xavier_init

HIDDEN_WIDTH = 512
HASH_LR_MULTIPLIER = 1000.0
CLASS_LR_MULTIPLIER = 100.0

CHECKPOINT_MAGIC = b"DSMP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation
    lr_multiplier: float = 1.0


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered layer stack ending in a tanh hash layer (fch) and a sigmoid
    classification layer (fcc)."""

    layers: tuple[LayerSpec, ...]
    code_length: int
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hash_index(self) -> int:
        return len(self.layers) - 2

    @property
    def class_index(self) -> int:
        return len(self.layers) - 1

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def validate(self):
        if len(self.layers) < 2:
            raise ConfigError("a network needs at least a hash layer and a classification layer")
        for k, layer in enumerate(self.layers):
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise ConfigError(f"layer {k}: dimensions must be >= 1, got {layer.in_dim}->{layer.out_dim}")
            if not layer.lr_multiplier > 0:
                raise ConfigError(f"layer {k}: lr_multiplier must be positive")
            if k + 1 < len(self.layers) and layer.out_dim != self.layers[k + 1].in_dim:
                raise ConfigError(
                    f"layer {k}: out_dim {layer.out_dim} does not chain into "
                    f"layer {k + 1} in_dim {self.layers[k + 1].in_dim}"
                )
        fch = self.layers[-2]
        fcc = self.layers[-1]
        if fch.out_dim != self.code_length or fch.activation is not Activation.TANH:
            raise ConfigError(
                f"layer {len(self.layers) - 2} (hash layer) must be tanh with "
                f"out_dim {self.code_length}"
            )
        if fcc.out_dim != self.num_classes or fcc.activation is not Activation.SIGMOID:
            raise ConfigError(
                f"layer {len(self.layers) - 1} (classification layer) must be sigmoid "
                f"with out_dim {self.num_classes}"
            )


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def unflatten(self, theta: np.ndarray) -> "NetworkParams":
        """Params with the same shapes as ``self`` filled from ``theta``."""
        weights, biases = [], []
        pos = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        if pos != theta.size:
            raise ShapeError(f"expected {pos} parameters, got {theta.size}")
        return NetworkParams(weights, biases)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            digest.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            digest.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return digest.hexdigest()

    def check_against(self, config: NetworkConfig):
        if len(self.weights) != config.num_layers or len(self.biases) != config.num_layers:
            raise ShapeError(f"params have {len(self.weights)} layers, config has {config.num_layers}")
        for k, (layer, w, b) in enumerate(zip(config.layers, self.weights, self.biases)):
            if w.shape != (layer.out_dim, layer.in_dim) or b.shape != (layer.out_dim,):
                raise ShapeError(
                    f"layer {k}: params W{w.shape} c{b.shape} do not match "
                    f"{layer.out_dim}x{layer.in_dim}"
                )


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass, kept for backprop.

    ``post_activations[0]`` is the input batch; ``post_activations[m]`` is
    the output of layer ``m`` (1-based), so the last two entries are the
    relaxed codes and class probabilities.
    """

    pre_activations: list[np.ndarray]
    post_activations: list[np.ndarray] = field(repr=False)

    @property
    def relaxed_codes(self) -> np.ndarray:
        return self.post_activations[-2]

    @property
    def class_probs(self) -> np.ndarray:
        return self.post_activations[-1]

    @property
    def batch_size(self) -> int:
        return self.post_activations[0].shape[1]


def build_network(config: NetworkConfig, rng: np.random.Generator) -> NetworkParams:
    config.validate()
    weights = [xavier_init(l.out_dim, l.in_dim, rng) for l in config.layers]
    biases = [np.zeros(l.out_dim) for l in config.layers]
    return NetworkParams(weights, biases)


def forward(params: NetworkParams, config: NetworkConfig, batch: np.ndarray) -> ForwardTrace:
    """Run ``batch`` (in_dim x n, one item per column) through the network."""
    z = np.asarray(batch, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != config.in_dim:
        raise ShapeError(f"batch has shape {z.shape}, network expects {config.in_dim} rows")
    pre, post = [], [z]
    for layer, w, b in zip(config.layers, params.weights, params.biases):
        if w.shape != (layer.out_dim, z.shape[0]):
            raise ShapeError(f"weight {w.shape} cannot consume input with {z.shape[0]} rows")
        a = w @ z + b[:, None]
        z = apply_activation(a, layer.activation)
        pre.append(a)
        post.append(z)
    return ForwardTrace(pre, post)


def encode_relaxed(params: NetworkParams, config: NetworkConfig, features: np.ndarray,
                   chunk: int = 4096) -> np.ndarray:
    """Relaxed hash-layer outputs (L x n) for item-major ``features`` (n x d)."""
    features = np.asarray(features, dtype=np.float64)
    out = np.empty((config.code_length, features.shape[0]))
    for start in range(0, features.shape[0], chunk):
        block = features[start:start + chunk].T
        out[:, start:start + chunk] = forward(params, config, block).relaxed_codes
    return out


def default_configs(d_x: int, d_y: int, code_length: int, num_classes: int,
                    hidden: int = HIDDEN_WIDTH) -> tuple[NetworkConfig, NetworkConfig]:
    """Four-layer image and text networks: d -> h -> h -> L (tanh) -> C (sigmoid)."""
    return (
        _four_layer(d_x, hidden, code_length, num_classes),
        _four_layer(d_y, hidden, code_length, num_classes),
    )


def _four_layer(d_in, hidden, code_length, num_classes):
    layers = (
        LayerSpec(d_in, hidden, Activation.RELU, 1.0),
        LayerSpec(hidden, hidden, Activation.RELU, 1.0),
        LayerSpec(hidden, code_length, Activation.TANH, HASH_LR_MULTIPLIER),
        LayerSpec(code_length, num_classes, Activation.SIGMOID, CLASS_LR_MULTIPLIER),
    )
    return NetworkConfig(layers, code_length, num_classes)


def config_from_dims(dims: list[tuple[int, int]]) -> NetworkConfig:
    """Rebuild a NetworkConfig from stored layer dims using the default
    activations and learning-rate multipliers."""
    if len(dims) < 2:
        raise FormatError("checkpoint must contain at least two layers")
    layers = [LayerSpec(i, o, Activation.RELU, 1.0) for i, o in dims[:-2]]
    layers.append(LayerSpec(*dims[-2], Activation.TANH, HASH_LR_MULTIPLIER))
    layers.append(LayerSpec(*dims[-1], Activation.SIGMOID, CLASS_LR_MULTIPLIER))
    return NetworkConfig(tuple(layers), dims[-2][1], dims[-1][1])


def checkpoint_bytes(params: NetworkParams) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.weights))]
    for w, b in zip(params.weights, params.biases):
        out_dim, in_dim = w.shape
        chunks.append(struct.pack("<II", in_dim, out_dim))
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(params: NetworkParams, path):
    atomic_write(path, checkpoint_bytes(params))


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def parse_checkpoint(data: bytes) -> NetworkParams:
    if len(data) < 12:
        raise FormatError("checkpoint truncated in header", len(data))
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 12
    weights, biases = [], []
    for _ in range(n_layers):
        if pos + 8 > len(data):
            raise FormatError("checkpoint truncated in layer header", pos)
        in_dim, out_dim = struct.unpack_from("<II", data, pos)
        pos += 8
        need = 8 * (in_dim * out_dim + out_dim)
        if pos + need > len(data):
            raise FormatError("checkpoint truncated in layer data", pos)
        w = np.frombuffer(data, dtype="<f8", count=in_dim * out_dim, offset=pos)
        pos += 8 * in_dim * out_dim
        b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=pos)
        pos += 8 * out_dim
        weights.append(w.astype(np.float64).reshape(out_dim, in_dim))
        biases.append(b.astype(np.float64))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last layer", pos)
    return NetworkParams(weights, biases)


def checkpoint_dims(params: NetworkParams) -> list[tuple[int, int]]:
    return [(w.shape[1], w.shape[0]) for w in params.weights]
