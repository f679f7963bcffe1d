"""Discrete states embedded in continuous space.

The likelihood of a point ``x`` belonging to state ``j`` is the dot product
``f(x, j) = Emb(j) . x``; rounding picks the state with the largest
likelihood (lowest index on ties).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REPRESENTATIONS = ("embedding", "fixed_binary", "binary_bits")


@dataclass
class EmbeddingTable:
    weights: np.ndarray
    trainable: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("embedding weights must be a K x m matrix")
        if self.K < 2:
            raise ValueError("need at least two discrete states")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("embedding weights must be finite")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    def embed(self, indices) -> np.ndarray:
        indices = np.asarray(indices)
        if np.any(indices < 0) or np.any(indices >= self.K):
            raise IndexError(f"state index outside [0, {self.K})")
        return self.weights[indices]

    def min_row_distance(self) -> float:
        """Smallest pairwise L-inf distance between rows."""
        w = self.weights
        d = np.abs(w[:, None, :] - w[None, :, :]).max(axis=-1)
        d[np.diag_indices(self.K)] = np.inf
        return float(d.min())

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.weights.copy(), self.trainable)


def random_embedding(K: int, m: int, rng: np.random.Generator, trainable: bool = True) -> EmbeddingTable:
    """Uniform init in ``[-1/sqrt(m), 1/sqrt(m)]`` per coordinate."""
    bound = 1.0 / np.sqrt(m)
    return EmbeddingTable(rng.uniform(-bound, bound, size=(K, m)), trainable=trainable)


def binary_code_table(K: int) -> EmbeddingTable:
    """Fixed table whose rows are the +/-1 binary codes of ``0..K-1`` (MSB first)."""
    nbits = max(1, int(np.ceil(np.log2(K))))
    shifts = np.arange(nbits - 1, -1, -1)
    bits = (np.arange(K)[:, None] >> shifts) & 1
    return EmbeddingTable(2.0 * bits - 1.0, trainable=False)


def bit_table() -> EmbeddingTable:
    """The two-state table used per bit: index 0 is +1, index 1 is -1."""
    return EmbeddingTable(np.array([[1.0], [-1.0]]), trainable=False)


def likelihood(x, j, table: EmbeddingTable):
    """``f(x, j) = Emb(j) . x``; ``x`` may carry leading batch dims."""
    j = np.asarray(j)
    if np.any(j < 0) or np.any(j >= table.K):
        raise IndexError(f"state index outside [0, {table.K})")
    return np.sum(np.asarray(x, dtype=np.float64) * table.weights[j], axis=-1)


def logits(x, table: EmbeddingTable) -> np.ndarray:
    """Likelihood of every state, shape ``x.shape[:-1] + (K,)``."""
    return np.asarray(x, dtype=np.float64) @ table.weights.T


def round_to_discrete(x, table: EmbeddingTable) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest-index tie-break
    return np.argmax(logits(x, table), axis=-1)


# -- binary coding of 8-bit sub-pixels ---------------------------------

_SHIFTS = np.arange(7, -1, -1)


def encode_binary(v) -> np.ndarray:
    """Integers 0..255 to +/-1 bit vectors (MSB first), shape ``v.shape + (8,)``."""
    v = np.asarray(v)
    if np.any(v < 0) or np.any(v > 255) or np.any(v != np.floor(v)):
        raise ValueError("binary coding expects integers in [0, 255]")
    bits = (v.astype(np.int64)[..., None] >> _SHIFTS) & 1
    return 2.0 * bits - 1.0


def decode_binary(bits) -> np.ndarray:
    """Threshold each coordinate at 0 (``>= 0`` reads as 1) and pack MSB first."""
    b = (np.asarray(bits) >= 0).astype(np.int64)
    if b.shape[-1] != 8:
        raise ValueError("binary codes have 8 coordinates")
    return np.sum(b << _SHIFTS, axis=-1)


def bits_to_indices(bits) -> np.ndarray:
    """+/-1 bits to state indices of :func:`bit_table` (+1 -> 0, -1 -> 1)."""
    return (np.asarray(bits) < 0).astype(np.int64)


def indices_to_bits(indices) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(indices, dtype=np.float64)


@dataclass
class DataSpace:
    """How a dataset of integer symbols lives in continuous space.

    ``embedding`` and ``fixed_binary`` give every position one vector of
    dimension ``m`` and one boundary element.  ``binary_bits`` turns each
    8-bit sub-pixel into 8 independent one-dimensional elements, each with
    the two-state table of :func:`bit_table`.
    """

    repr: str
    table: EmbeddingTable

    def __post_init__(self):
        if self.repr not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.repr!r}; expected one of {REPRESENTATIONS}")

    @classmethod
    def build(cls, repr: str, K: int, m: int, rng: np.random.Generator, trainable: bool = True) -> "DataSpace":
        if repr == "embedding":
            return cls(repr, random_embedding(K, m, rng, trainable=trainable))
        if repr == "fixed_binary":
            return cls(repr, binary_code_table(K))
        return cls(repr, bit_table())

    @property
    def D(self) -> int:
        """Feature dimension per position seen by the denoiser."""
        return 8 if self.repr == "binary_bits" else self.table.m

    @property
    def K_data(self) -> int:
        return 256 if self.repr == "binary_bits" else self.table.K

    @property
    def rounding_loss(self) -> bool:
        return self.repr != "binary_bits"

    def encode(self, data):
        """Symbols ``(..., n)`` to ``(x0, labels)``: ``x0`` in position view, labels per element."""
        data = np.asarray(data)
        if self.repr == "binary_bits":
            x0 = encode_binary(data)
            return x0, bits_to_indices(x0)
        return self.table.embed(data), data.astype(np.int64)

    def elements(self, x) -> np.ndarray:
        return x[..., None] if self.repr == "binary_bits" else x

    def positions(self, x_elem) -> np.ndarray:
        return x_elem[..., 0] if self.repr == "binary_bits" else x_elem

    def decode(self, x) -> np.ndarray:
        """Round a position-view array back to symbols."""
        if self.repr == "binary_bits":
            return decode_binary(x)
        return round_to_discrete(x, self.table)
