"""Vectors, sparse rows, seeded sampling and soft-thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidDimensionError, InvalidInputError, InvalidThresholdError

Vector = NDArray[np.float64]
SeededRng = np.random.Generator


def seeded_rng(seed: int, stream: int = 0) -> SeededRng:
    """Counter-based generator for the independent stream ``(seed, stream)``.

    Philox keyed through a SeedSequence, so child streams never overlap and
    the same pair always reproduces the same draws.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def gaussian_vector(rng: SeededRng, d: int) -> Vector:
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    return rng.standard_normal(d)


def gaussian_block(rng: SeededRng, k: int, d: int) -> NDArray[np.float64]:
    """``k`` independent N(0, I_d) directions as rows of a (k, d) array."""
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    return rng.standard_normal((k, d))


def soft_threshold(x: Vector, t: float) -> Vector:
    if t < 0:
        raise InvalidThresholdError(f"threshold must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return x.copy()
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def as_vector(x, d: int | None = None) -> Vector:
    """Validate ``x`` as a finite float vector (of length ``d`` if given)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidDimensionError(f"expected a 1-D vector, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise InvalidDimensionError(f"expected length {d}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("vector contains NaN or Inf")
    return x


@dataclass(frozen=True)
class SparseRow:
    indices: NDArray[np.int64]
    values: NDArray[np.float64]
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 1:
            raise InvalidInputError("indices and values must be 1-D and of equal length")
        if idx.size:
            if idx[0] < 0 or np.any(np.diff(idx) <= 0):
                raise InvalidInputError("indices must be nonnegative and strictly increasing")
            if idx[-1] >= self.dim:
                raise InvalidInputError(f"index {idx[-1]} out of range for dim {self.dim}")
        if not np.all(np.isfinite(val)):
            raise InvalidInputError("row values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def dot(self, x: Vector) -> float:
        return float(np.dot(self.values, np.asarray(x)[self.indices]))

    def to_dense(self) -> Vector:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, SparseRow):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None
