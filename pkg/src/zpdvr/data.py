"""LIBSVM binary-classification files and synthetic test problems."""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
import scipy.sparse as sp

from .core import SparseRow, seeded_rng
from .errors import InvalidInputError, ParseError
from .objective import LogisticProblem, QuadraticLassoProblem

_LABELS = {-1.0: -1, 0.0: -1, 1.0: 1}


@dataclass(frozen=True)
class Dataset:
    rows: tuple[SparseRow, ...]
    labels: np.ndarray
    d: int

    @property
    def n(self) -> int:
        return len(self.rows)

    def to_csr(self) -> sp.csr_matrix:
        indptr = np.concatenate([[0], np.cumsum([r.nnz for r in self.rows])]).astype(np.int64)
        indices = np.concatenate([r.indices for r in self.rows]) if self.rows else np.zeros(0, np.int64)
        data = np.concatenate([r.values for r in self.rows]) if self.rows else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n, self.d))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.labels, other.labels) and self.rows == other.rows

    __hash__ = None


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    d: int
    nnz: int
    label_balance: float  # fraction of +1 labels


def _open_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_libsvm(source: bytes | str | os.PathLike | BinaryIO, d: int | None = None) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing indices).

    ``source`` is raw bytes, a path, or a binary stream; gzip input is
    detected by its magic bytes. Labels 0/-1 map to -1 and 1/+1 to +1.
    ``d`` overrides the inferred dimension and must cover every index.
    """
    text = _open_bytes(source).decode("utf-8")
    rows_idx: list[list[int]] = []
    rows_val: list[list[float]] = []
    labels: list[int] = []
    max_idx = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_label = float(tokens[0])
        except ValueError:
            raise ParseError(f"non-numeric label {tokens[0]!r}", lineno) from None
        if raw_label not in _LABELS:
            raise ParseError(f"label {tokens[0]!r} is not a binary label", lineno)
        idx, val = [], []
        prev = 0
        for tok in tokens[1:]:
            key, sep, value = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed feature token {tok!r}", lineno)
            try:
                j = int(key)
                x = float(value)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            if j < 1:
                raise ParseError(f"feature index {j} is not 1-based", lineno)
            if j <= prev:
                raise ParseError(f"feature index {j} does not increase", lineno)
            if not np.isfinite(x):
                raise ParseError(f"non-finite feature value {value!r}", lineno)
            prev = j
            idx.append(j - 1)
            val.append(x)
        max_idx = max(max_idx, prev)
        labels.append(_LABELS[raw_label])
        rows_idx.append(idx)
        rows_val.append(val)
    if not labels:
        raise ParseError("no samples found")
    if d is None:
        d = max(max_idx, 1)
    elif d < max_idx:
        raise ParseError(f"dimension override {d} is below the largest index {max_idx}")
    rows = tuple(SparseRow(np.array(i, dtype=np.int64), np.array(v, dtype=float), d) for i, v in zip(rows_idx, rows_val))
    return Dataset(rows, np.array(labels, dtype=np.int64), d)


def write_libsvm(dataset: Dataset) -> bytes:
    out = io.StringIO()
    for row, y in zip(dataset.rows, dataset.labels):
        feats = " ".join(f"{j + 1}:{x!r}" for j, x in zip(row.indices.tolist(), row.values.tolist()))
        out.write(("+1" if y > 0 else "-1") + (" " + feats if feats else "") + "\n")
    return out.getvalue().encode("utf-8")


def dataset_summary(dataset: Dataset) -> DatasetSummary:
    nnz = sum(r.nnz for r in dataset.rows)
    return DatasetSummary(dataset.n, dataset.d, nnz, float(np.mean(dataset.labels > 0)))


def max_abs_scale(dataset: Dataset) -> Dataset:
    """Divide every feature by its largest absolute value (zero columns untouched)."""
    scale = np.zeros(dataset.d)
    for r in dataset.rows:
        np.maximum.at(scale, r.indices, np.abs(r.values))
    scale[scale == 0] = 1.0
    rows = tuple(SparseRow(r.indices, r.values / scale[r.indices], r.dim) for r in dataset.rows)
    return Dataset(rows, dataset.labels.copy(), dataset.d)


def logistic_problem(dataset: Dataset, lam1: float, lam2: float, scale: bool = False) -> LogisticProblem:
    if scale:
        dataset = max_abs_scale(dataset)
    return LogisticProblem(dataset.to_csr(), dataset.labels.astype(float), lam1=lam1, lam2=lam2)


def make_quadratic_lasso(
    n: int, d: int, kappa_target: float, lambda1: float, seed: int = 0, mu: float = 1.0
) -> QuadraticLassoProblem:
    """Diagonal quadratics with every component spectrum spanning exactly [mu, kappa * mu].

    Coordinate j of each component sits near mu * kappa^(j / (d - 1)) on a
    log scale, jittered per component with the two end coordinates pinned,
    so L / mu equals ``kappa_target`` and the averaged quadratic keeps a
    comparable conditioning. The unregularized minimizer has every entry
    at least 0.5 in magnitude.
    """
    if kappa_target < 1:
        raise InvalidInputError(f"kappa_target must be >= 1, got {kappa_target}")
    if n < 1 or d < 1:
        raise InvalidInputError("n and d must be >= 1")
    rng = seeded_rng(seed, stream=0)
    if d == 1:
        t = np.zeros((n, 1))
    else:
        base = np.linspace(0.0, 1.0, d)
        jitter = rng.uniform(-0.5, 0.5, size=(n, d)) / (d - 1)
        t = np.clip(base + jitter, 0.0, 1.0)
        t[:, 0] = 0.0
        t[:, -1] = 1.0
    A = mu * np.power(float(kappa_target), t)
    if d > 1:
        A[:, -1] = mu * float(kappa_target)
    x_target = rng.choice([-1.0, 1.0], size=d) * rng.uniform(0.5, 2.0, size=d)
    noise = rng.standard_normal((n, d))
    noise -= noise.mean(axis=0)
    # per-component minimizers scatter around x_target; the average stays exact
    b = A * (x_target + noise)
    b += (A.mean(axis=0) * x_target - b.mean(axis=0))
    return QuadraticLassoProblem(A, b, lam1=lambda1)


def make_synthetic_classification(n: int, d: int, density: float = 0.1, seed: int = 0, binary: bool = True) -> Dataset:
    """Sparse two-class data from a planted linear separator with label noise."""
    if not 0 < density <= 1:
        raise InvalidInputError("density must lie in (0, 1]")
    rng = seeded_rng(seed, stream=1)
    w_true = rng.standard_normal(d)
    rows, labels = [], []
    for _ in range(n):
        mask = rng.random(d) < density
        if not mask.any():
            mask[rng.integers(d)] = True
        idx = np.flatnonzero(mask)
        vals = np.ones(idx.size) if binary else rng.standard_normal(idx.size)
        margin = float(vals @ w_true[idx])
        y = 1 if rng.random() < 1.0 / (1.0 + np.exp(-margin)) else -1
        rows.append(SparseRow(idx, vals, d))
        labels.append(y)
    return Dataset(tuple(rows), np.array(labels, dtype=np.int64), d)
