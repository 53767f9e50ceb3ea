"""Multimodal datasets: container, synthetic generator, splits and files.

DSMD layout (little-endian): magic ``DSMD``, u32 version = 1, u64 n,
u32 d_x, u32 d_y, u32 C, then n*d_x float32 image features (row-major),
n*d_y float32 text features, and n*C label bytes (0/1).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .fileio import atomic_write
from .numerics import make_rng

DATASET_MAGIC = b"DSMD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQIII")


@dataclass
class MultimodalDataset:
    """Aligned image features, text features and multi-hot labels.

    Features are stored at float32 precision (the file precision) and
    promoted to float64 by the consumers that compute with them.
    """

    x_features: np.ndarray
    y_features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.x_features = np.ascontiguousarray(self.x_features, dtype=np.float32)
        self.y_features = np.ascontiguousarray(self.y_features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.x_features.ndim != 2 or self.y_features.ndim != 2 or self.labels.ndim != 2:
            raise ShapeError("features and labels must be 2-D (items x dims)")
        n = self.x_features.shape[0]
        if self.y_features.shape[0] != n or self.labels.shape[0] != n:
            raise ShapeError(
                f"row counts disagree: x {n}, y {self.y_features.shape[0]}, "
                f"labels {self.labels.shape[0]}"
            )
        if np.any(self.labels > 1):
            raise ValueError("labels must be 0/1")
        if n and not np.all(self.labels.any(axis=1)):
            bad = int(np.flatnonzero(~self.labels.any(axis=1))[0])
            raise ValueError(f"item {bad} has no label")

    @property
    def n(self) -> int:
        return self.x_features.shape[0]

    @property
    def d_x(self) -> int:
        return self.x_features.shape[1]

    @property
    def d_y(self) -> int:
        return self.y_features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "MultimodalDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultimodalDataset(self.x_features[idx], self.y_features[idx], self.labels[idx])

    def __eq__(self, other):
        if not isinstance(other, MultimodalDataset):
            return NotImplemented
        return (np.array_equal(self.x_features, other.x_features)
                and np.array_equal(self.y_features, other.y_features)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    d_x: int = 64
    d_y: int = 32
    n: int = 1200
    noise: float = 0.15
    multi_label: bool = False
    cooccurrence: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic data needs at least 2 classes")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if min(self.d_x, self.d_y, self.n) < 1:
            raise ConfigError("d_x, d_y and n must be >= 1")
        if not 0 <= self.cooccurrence <= 1:
            raise ConfigError("cooccurrence must lie in [0, 1]")


@dataclass
class SyntheticDataset:
    dataset: MultimodalDataset
    x_prototypes: np.ndarray
    y_prototypes: np.ndarray


def _unit_rows(rng, rows, cols):
    p = rng.standard_normal((rows, cols))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def generate_synthetic_with_prototypes(spec: SynthSpec, rng=None) -> SyntheticDataset:
    rng = make_rng(spec.seed) if rng is None else rng
    c = spec.num_classes
    x_proto = _unit_rows(rng, c, spec.d_x)
    y_proto = _unit_rows(rng, c, spec.d_y)
    primary = rng.integers(0, c, size=spec.n)
    labels = np.zeros((spec.n, c), dtype=np.uint8)
    labels[np.arange(spec.n), primary] = 1
    if spec.multi_label and spec.cooccurrence > 0:
        extra = rng.random((spec.n, c)) < spec.cooccurrence
        labels |= extra.astype(np.uint8)
    x = labels @ x_proto + spec.noise * rng.standard_normal((spec.n, spec.d_x))
    y = labels @ y_proto + spec.noise * rng.standard_normal((spec.n, spec.d_y))
    return SyntheticDataset(MultimodalDataset(x, y, labels), x_proto, y_proto)


def generate_synthetic(spec: SynthSpec, rng=None) -> MultimodalDataset:
    """Class prototypes on the unit sphere, summed per item's label set,
    plus independent Gaussian noise in each modality."""
    return generate_synthetic_with_prototypes(spec, rng).dataset


@dataclass(frozen=True)
class SplitSpec:
    """Either a query fraction or a per-class query count, plus an optional
    cap on the number of training items drawn from the database."""

    query_fraction: float | None = 0.2
    per_class_queries: int | None = None
    train_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.query_fraction is None) == (self.per_class_queries is None):
            raise ConfigError("set exactly one of query_fraction and per_class_queries")
        if self.query_fraction is not None and not 0 <= self.query_fraction < 1:
            raise ConfigError("query_fraction must lie in [0, 1)")
        if self.per_class_queries is not None and self.per_class_queries < 0:
            raise ConfigError("per_class_queries must be >= 0")
        if self.train_size is not None and self.train_size < 1:
            raise ConfigError("train_size must be >= 1")


@dataclass
class Split:
    query: MultimodalDataset
    database: MultimodalDataset
    train_indices: np.ndarray
    query_indices: np.ndarray
    database_indices: np.ndarray


def split(ds: MultimodalDataset, spec: SplitSpec, rng=None) -> Split:
    rng = make_rng(spec.seed) if rng is None else rng
    perm = rng.permutation(ds.n)
    if spec.query_fraction is not None:
        n_query = int(round(spec.query_fraction * ds.n))
        query_idx = np.sort(perm[:n_query])
    else:
        taken = np.zeros(ds.n, dtype=bool)
        chosen = []
        for c in range(ds.num_classes):
            members = [i for i in perm if ds.labels[i, c] and not taken[i]]
            if len(members) < spec.per_class_queries:
                raise ConfigError(
                    f"class {c} has {len(members)} available items, "
                    f"cannot draw {spec.per_class_queries} queries"
                )
            pick = members[:spec.per_class_queries]
            taken[pick] = True
            chosen.extend(pick)
        query_idx = np.sort(np.asarray(chosen, dtype=np.int64))
    mask = np.ones(ds.n, dtype=bool)
    mask[query_idx] = False
    db_idx = np.flatnonzero(mask)
    if spec.train_size is None:
        train = np.arange(db_idx.size)
    else:
        if spec.train_size > db_idx.size:
            raise ConfigError(f"train_size {spec.train_size} exceeds database size {db_idx.size}")
        train = np.sort(rng.choice(db_idx.size, size=spec.train_size, replace=False))
    return Split(ds.subset(query_idx), ds.subset(db_idx), train, query_idx, db_idx)


def dataset_bytes(ds: MultimodalDataset) -> bytes:
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n, ds.d_x, ds.d_y, ds.num_classes)
    return b"".join([
        header,
        ds.x_features.astype("<f4").tobytes(),
        ds.y_features.astype("<f4").tobytes(),
        ds.labels.tobytes(),
    ])


def save(ds: MultimodalDataset, path):
    atomic_write(path, dataset_bytes(ds))


def parse(data: bytes) -> MultimodalDataset:
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {DATASET_MAGIC!r}", 0)
    if len(data) < _HEADER.size:
        raise FormatError("dataset truncated in header", len(data))
    _, version, n, d_x, d_y, c = _HEADER.unpack_from(data, 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    pos = _HEADER.size
    blocks = []
    for count, dtype, what in ((n * d_x, "<f4", "image features"),
                               (n * d_y, "<f4", "text features"),
                               (n * c, "u1", "labels")):
        size = count * np.dtype(dtype).itemsize
        if pos + size > len(data):
            raise FormatError(f"dataset truncated in {what}", len(data))
        blocks.append(np.frombuffer(data, dtype=dtype, count=count, offset=pos))
        pos += size
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after labels", pos)
    x, y, g = blocks
    try:
        return MultimodalDataset(
            x.astype(np.float32).reshape(n, d_x),
            y.astype(np.float32).reshape(n, d_y),
            g.reshape(n, c),
        )
    except ValueError as exc:
        raise FormatError(f"invalid dataset contents: {exc}", _HEADER.size) from exc


def load(path) -> MultimodalDataset:
    with open(path, "rb") as fh:
        return parse(fh.read())


def load_csv(path) -> MultimodalDataset:
    """Read a hand-written fixture.

    The first row declares the block widths, e.g. ``d_x=2,d_y=3,C=2``;
    every following row holds d_x + d_y + C comma-separated values.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file", 0) from None
        dims = {}
        for cell in header:
            key, _, value = cell.strip().partition("=")
            dims[key.strip()] = value.strip()
        try:
            d_x, d_y, c = int(dims["d_x"]), int(dims["d_y"]), int(dims["C"])
        except (KeyError, ValueError):
            raise FormatError(f"CSV header must declare d_x, d_y and C, got {header}", 0) from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != d_x + d_y + c:
                raise FormatError(f"line {line_no}: expected {d_x + d_y + c} values, got {len(row)}")
            rows.append([float(v) for v in row])
    table = np.asarray(rows, dtype=np.float64).reshape(-1, d_x + d_y + c)
    labels = table[:, d_x + d_y:]
    if not np.all((labels == 0) | (labels == 1)):
        raise FormatError("label columns must be 0 or 1")
    return MultimodalDataset(table[:, :d_x], table[:, d_x:d_x + d_y], labels.astype(np.uint8))


def save_csv(ds: MultimodalDataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"d_x={ds.d_x}", f"d_y={ds.d_y}", f"C={ds.num_classes}"])
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.x_features[i]]
                            + [repr(float(v)) for v in ds.y_features[i]]
                            + [int(v) for v in ds.labels[i]])
