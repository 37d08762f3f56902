"""Gaussian-smoothing and coordinate finite-difference gradient estimators.

All estimators use forward differences and charge the counter for every
component evaluation they make; no function value is cached between calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import Vector, as_vector
from .errors import InvalidBatchError, InvalidSmoothingError
from .objective import CompositeProblem, SzoCounter, eval_full, eval_pairs

DEFAULT_SMOOTHING = 1e-3


@dataclass(frozen=True)
class SmoothingConfig:
    v: float = DEFAULT_SMOOTHING
    batch_dirs: int = 1
    batch_samples: int = 1

    def __post_init__(self):
        _check_v(self.v)
        if self.batch_dirs < 1 or self.batch_samples < 1:
            raise InvalidBatchError("batch sizes must be >= 1")


def _check_v(v: float) -> None:
    if not v > 0:
        raise InvalidSmoothingError(f"smoothing constant must be positive, got {v}")


def dir_estimate_component(
    problem: CompositeProblem, i: int, x: Vector, u: Vector, cfg: SmoothingConfig, counter: SzoCounter
) -> Vector:
    """((f_i(x + v u) - f_i(x)) / v) * u, two evaluations."""
    _check_v(cfg.v)
    x = as_vector(x, problem.d)
    u = as_vector(u, problem.d)
    vals = eval_pairs(problem, [i, i], np.stack([x + cfg.v * u, x]), counter)
    return ((vals[0] - vals[1]) / cfg.v) * u


def dir_estimate_full(
    problem: CompositeProblem, x: Vector, u: Vector, cfg: SmoothingConfig, counter: SzoCounter
) -> Vector:
    """Directional estimate of the full gradient along ``u``; 2n evaluations."""
    return dir_estimate_full_multi(problem, x, np.atleast_2d(u), cfg, counter)


def dir_estimate_full_multi(
    problem: CompositeProblem, x: Vector, U: NDArray[np.float64], cfg: SmoothingConfig, counter: SzoCounter
) -> Vector:
    """Average of :func:`dir_estimate_full` over the rows of ``U``; 2n per row."""
    _check_v(cfg.v)
    x = as_vector(x, problem.d)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    k = U.shape[0]
    if k == 0:
        raise InvalidBatchError("need at least one direction")
    points = np.concatenate([x + cfg.v * U, np.broadcast_to(x, (k, problem.d))])
    vals = eval_full(problem, points, counter)
    slopes = np.mean((vals[:k] - vals[k:]) / cfg.v, axis=1)
    return slopes @ U / k


def coord_fd_gradient(problem: CompositeProblem, x: Vector, v: float, counter: SzoCounter) -> Vector:
    """Forward-difference full gradient; f_i(x) is evaluated once per component.

    Costs exactly n * (d + 1) evaluations.
    """
    _check_v(v)
    x = as_vector(x, problem.d)
    points = np.vstack([x, x + v * np.eye(problem.d)])
    vals = eval_full(problem, points, counter)  # (d + 1, n)
    return np.mean((vals[1:] - vals[0]) / v, axis=1)


def _pair_layout(sample_set, dir_set, d: int):
    idx = np.asarray(sample_set, dtype=np.int64).ravel()
    U = np.atleast_2d(np.asarray(dir_set, dtype=float))
    if idx.size == 0 or U.shape[0] == 0 or U.size == 0:
        raise InvalidBatchError("sample and direction sets must be nonempty")
    if U.shape[1] != d:
        raise InvalidBatchError(f"directions must have dimension {d}")
    b_u = U.shape[0]
    return np.repeat(idx, b_u), np.tile(U, (idx.size, 1))


def batched_dir_estimate(
    problem: CompositeProblem, sample_set, x: Vector, dir_set, cfg: SmoothingConfig, counter: SzoCounter
) -> Vector:
    """Mean of the component estimate over all (sample, direction) pairs.

    Costs ``2 * len(sample_set) * len(dir_set)`` evaluations.
    """
    _check_v(cfg.v)
    x = as_vector(x, problem.d)
    idx, U = _pair_layout(sample_set, dir_set, problem.d)
    m = idx.size
    vals = eval_pairs(problem, np.concatenate([idx, idx]), np.concatenate([x + cfg.v * U, np.broadcast_to(x, U.shape)]), counter)
    slopes = (vals[:m] - vals[m:]) / cfg.v
    return slopes @ U / m


def batched_difference_estimate(
    problem: CompositeProblem, sample_set, x: Vector, w: Vector, dir_set, cfg: SmoothingConfig, counter: SzoCounter
) -> Vector:
    """``batched_dir_estimate(x) - batched_dir_estimate(w)`` on shared pairs.

    Both estimates use the same components and directions, so the result is
    exactly zero when ``x`` and ``w`` coincide. Costs ``4 * pairs``.
    """
    _check_v(cfg.v)
    x = as_vector(x, problem.d)
    w = as_vector(w, problem.d)
    idx, U = _pair_layout(sample_set, dir_set, problem.d)
    return _difference_estimate(problem, idx, x, w, U, cfg.v, counter)


def _difference_estimate(problem, idx, x, w, U, v, counter):
    # hot path: inputs already validated and laid out pairwise
    m = idx.size
    vU = v * U
    points = np.empty((4 * m, problem.d))
    points[:m] = x + vU
    points[m:2 * m] = x
    points[2 * m:3 * m] = w + vU
    points[3 * m:] = w
    vals = problem._pair_values(np.tile(idx, 4) if m > 1 else np.repeat(idx, 4), points)
    counter.add(4 * m)
    coef = ((vals[:m] - vals[m:2 * m]) - (vals[2 * m:3 * m] - vals[3 * m:])) / v
    return coef @ U / m


def _pair_layout_fast(idx, U):
    """Pairwise layout of ``len(idx)`` samples x ``len(U)`` directions (no validation)."""
    if idx.size == 1 and U.shape[0] == 1:
        return idx, U
    return np.repeat(idx, U.shape[0]), np.tile(U, (idx.size, 1))
