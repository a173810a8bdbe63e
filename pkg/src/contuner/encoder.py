"""Frozen deterministic text encoder.

Stands in for a large pretrained backbone: a signed hashed n-gram count
vector (L2-normalized) pushed through a fixed seeded Gaussian projection
and tanh. The projection is built once from the seed and never mutated;
identical configs give bit-identical behaviour on all inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import PreprocessedInput
from .errors import InvalidArgumentError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 4096
    hidden_dim: int = 256
    seed: int = 0
    ngram_orders: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.hidden_dim < 1 or self.feature_dim < self.hidden_dim:
            raise InvalidArgumentError(
                "need feature_dim >= hidden_dim >= 1, got "
                f"{self.feature_dim} / {self.hidden_dim}"
            )
        orders = tuple(sorted(set(self.ngram_orders)))
        if not orders or any(n < 1 for n in orders):
            raise InvalidArgumentError("ngram_orders must be positive integers")
        object.__setattr__(self, "ngram_orders", orders)


@dataclass(frozen=True)
class Representation:
    """Fixed-width example representation; entries lie in (-1, 1)."""

    values: np.ndarray


class Encoder:
    """Maps a preprocessed input to its representation.

    ``forward_calls`` counts backbone forward passes and is the hook for the
    complexity and cache instrumentation. Hashed features are memoized per
    distinct token sequence (a pure speed-up; the counter still advances on
    every forward).
    """

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        w0 = rng.standard_normal((config.hidden_dim, config.feature_dim))
        w0 /= np.sqrt(config.feature_dim)
        w0.setflags(write=False)
        self._w0 = w0
        # Row-gather layout for the sparse product.
        w0t = np.ascontiguousarray(w0.T)
        w0t.setflags(write=False)
        self._w0t = w0t
        self.forward_calls = 0
        self._feature_memo: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray]] = {}

    @property
    def weights(self) -> np.ndarray:
        return self._w0

    def weight_checksum(self) -> str:
        return hashlib.sha256(self._w0.tobytes()).hexdigest()

    def hashed_counts(self, tokens: tuple[str, ...]) -> dict[int, float]:
        """Signed n-gram counts per hash bucket, before normalization.

        The bucket comes from the low bits of the hash and the sign from its
        top bit, which keeps collision bias small.
        """
        feature_dim = self.config.feature_dim
        counts: dict[int, float] = {}
        for n in self.config.ngram_orders:
            for i in range(len(tokens) - n + 1):
                key = str(n) + "\x1f" + "\x1f".join(tokens[i : i + n])
                h = fnv1a64(key.encode("utf-8"))
                bucket = h % feature_dim
                sign = 1.0 if (h >> 63) == 0 else -1.0
                counts[bucket] = counts.get(bucket, 0.0) + sign
        return counts

    def feature_vector(self, tokens: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Sparse L2-normalized feature vector as (bucket indices, values)."""
        if not tokens:
            raise InvalidArgumentError("cannot encode an empty token sequence")
        memo = self._feature_memo.get(tokens)
        if memo is not None:
            return memo
        counts = self.hashed_counts(tokens)
        items = sorted((b, c) for b, c in counts.items() if c != 0.0)
        if not items:
            # Signed counts cancelled in every bucket; astronomically rare.
            raise InvalidArgumentError("input hashes to the zero feature vector")
        idx = np.array([b for b, _ in items], dtype=np.intp)
        val = np.array([c for _, c in items], dtype=np.float64)
        val /= np.linalg.norm(val)
        idx.setflags(write=False)
        val.setflags(write=False)
        self._feature_memo[tokens] = (idx, val)
        return idx, val

    def forward(self, inp: PreprocessedInput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One backbone pass: returns (feature idx, feature values, projection)."""
        idx, val = self.feature_vector(inp.marked_text)
        z0 = val @ self._w0t[idx]
        self.forward_calls += 1
        return idx, val, z0

    def encode(self, inp: PreprocessedInput) -> Representation:
        _, _, z0 = self.forward(inp)
        return Representation(values=np.tanh(z0))
