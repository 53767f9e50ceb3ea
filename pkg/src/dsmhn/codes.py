"""Binary hash codes: label similarity, sign quantization, 64-bit packing,
Hamming distance and the on-disk code file.

Bit ``b`` of an item lives in word ``b // 64`` at position ``b % 64``
(LSB first); +1 is stored as a set bit and -1 as a clear bit. Padding
bits above L are always zero, so distance kernels never mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .fileio import atomic_write

CODES_MAGIC = b"DSMB"
CODES_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


def words_per_code(code_length: int) -> int:
    return (code_length + 63) // 64


@dataclass(frozen=True)
class BinaryCodes:
    """n packed codes of L bits; ``words`` has shape (n, ceil(L/64))."""

    code_length: int
    words: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint64)
        if w.ndim != 2 or w.shape[1] != words_per_code(self.code_length):
            raise ShapeError(
                f"words shape {w.shape} does not hold {self.code_length}-bit codes"
            )
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    def __len__(self):
        return self.words.shape[0]

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def subset(self, indices) -> "BinaryCodes":
        return BinaryCodes(self.code_length, self.words[np.asarray(indices)])

    def unpack(self) -> np.ndarray:
        """Dense item-major (n, L) int8 array of +1/-1."""
        raw = self.words.astype("<u8").view(np.uint8).reshape(self.n, -1)
        bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :self.code_length]
        return bits.astype(np.int8) * 2 - 1

    def __eq__(self, other):
        if not isinstance(other, BinaryCodes):
            return NotImplemented
        return self.code_length == other.code_length and np.array_equal(self.words, other.words)


def pack(dense) -> BinaryCodes:
    """Pack an item-major (n, L) array of +1/-1 values."""
    dense = np.asarray(dense)
    if dense.ndim != 2:
        raise ShapeError(f"expected an (n, L) array, got shape {dense.shape}")
    if not np.all((dense == 1) | (dense == -1)):
        raise ValueError("dense codes must contain only +1 and -1")
    n, code_length = dense.shape
    if code_length < 1:
        raise ShapeError("code length must be >= 1")
    n_words = words_per_code(code_length)
    bits = np.zeros((n, 64 * n_words), dtype=np.uint8)
    bits[:, :code_length] = dense > 0
    raw = np.packbits(bits, axis=1, bitorder="little")
    words = raw.view("<u8").astype(np.uint64).reshape(n, n_words)
    return BinaryCodes(code_length, words)


def code_sign(z) -> np.ndarray:
    """sign with sign(0) = +1, returned as int8."""
    return np.where(np.asarray(z) >= 0, 1, -1).astype(np.int8)


def quantize(z) -> BinaryCodes:
    """Binarize relaxed codes of shape (L, n), one item per column."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected (L, n) relaxed codes, got shape {z.shape}")
    return pack(code_sign(z).T)


def label_similarity(g_i, g_j) -> int:
    g_i = np.asarray(g_i)
    g_j = np.asarray(g_j)
    if g_i.shape != g_j.shape:
        raise ShapeError(f"label vectors differ in length: {g_i.shape} vs {g_j.shape}")
    return 1 if float(g_i.astype(np.float64) @ g_j.astype(np.float64)) > 0 else -1


def similarity_matrix(labels_a, labels_b) -> np.ndarray:
    """+1/-1 matrix over all pairs of rows of two item-major label blocks."""
    a = np.asarray(labels_a, dtype=np.float64)
    b = np.asarray(labels_b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"label dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return np.where(a @ b.T > 0, 1, -1).astype(np.int8)


def _check_lengths(a: BinaryCodes, b: BinaryCodes):
    if a.code_length != b.code_length:
        raise ShapeError(f"code lengths differ: {a.code_length} vs {b.code_length}")


def hamming(a: BinaryCodes, k: int, b: BinaryCodes, m: int) -> int:
    """Hamming distance between code ``k`` of ``a`` and code ``m`` of ``b``."""
    _check_lengths(a, b)
    return int(np.bitwise_count(a.words[k] ^ b.words[m]).sum())


def hamming_paired(a: BinaryCodes, b: BinaryCodes) -> np.ndarray:
    """Distances between row i of ``a`` and row i of ``b``."""
    _check_lengths(a, b)
    if a.n != b.n:
        raise ShapeError(f"paired distance needs equal counts, got {a.n} and {b.n}")
    return np.bitwise_count(a.words ^ b.words).sum(axis=1, dtype=np.int64)


def hamming_matrix(queries: BinaryCodes, database: BinaryCodes, chunk: int = 256) -> np.ndarray:
    """(n_queries, n_database) matrix of Hamming distances."""
    _check_lengths(queries, database)
    out = np.empty((queries.n, database.n), dtype=np.int64)
    db = database.words[None, :, :]
    for start in range(0, queries.n, chunk):
        q = queries.words[start:start + chunk, None, :]
        out[start:start + chunk] = np.bitwise_count(q ^ db).sum(axis=2, dtype=np.int64)
    return out


def inner_product_sim(a: BinaryCodes, k: int, b: BinaryCodes, m: int) -> float:
    code_length = a.code_length
    return (code_length - 2 * hamming(a, k, b, m)) / code_length


def codes_bytes(codes: BinaryCodes) -> bytes:
    header = _HEADER.pack(CODES_MAGIC, CODES_VERSION, codes.code_length, codes.n)
    return header + np.ascontiguousarray(codes.words, dtype="<u8").tobytes()


def save_codes(codes: BinaryCodes, path):
    atomic_write(path, codes_bytes(codes))


def parse_codes(data: bytes) -> BinaryCodes:
    if len(data) < _HEADER.size:
        raise FormatError("code file truncated in header", len(data))
    magic, version, code_length, n = _HEADER.unpack_from(data, 0)
    if magic != CODES_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CODES_MAGIC!r}", 0)
    if version != CODES_VERSION:
        raise FormatError(f"unsupported code file version {version}", 4)
    if code_length < 1:
        raise FormatError("code length must be >= 1", 8)
    n_words = words_per_code(code_length)
    expected = _HEADER.size + 8 * n * n_words
    if len(data) != expected:
        raise FormatError(f"code file has {len(data)} bytes, expected {expected}",
                          min(len(data), expected))
    words = np.frombuffer(data, dtype="<u8", offset=_HEADER.size).astype(np.uint64)
    words = words.reshape(n, n_words)
    if code_length % 64:
        if np.any(words[:, -1] >> np.uint64(code_length % 64)):
            raise FormatError("padding bits above the code length are set", _HEADER.size)
    return BinaryCodes(code_length, words)


def load_codes(path) -> BinaryCodes:
    with open(path, "rb") as fh:
        return parse_codes(fh.read())
