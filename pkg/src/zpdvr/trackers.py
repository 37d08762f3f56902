"""Gradient learner h~ refined along saved random directions, and the reference gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Vector, as_vector
from .errors import InvalidDimensionError
from .estimators import SmoothingConfig, dir_estimate_full_multi
from .objective import CompositeProblem, SzoCounter


@dataclass(frozen=True)
class GradientLearner:
    """Running estimate ``h_tilde`` of the gradient at the reference point.

    ``saved_dir`` holds the direction (or a ``(k, d)`` block of directions)
    drawn at the most recent reference refresh.
    """

    h_tilde: Vector
    saved_dir: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "GradientLearner":
        return cls(np.zeros(d), np.zeros(d))

    def with_direction(self, u) -> "GradientLearner":
        return GradientLearner(self.h_tilde, np.asarray(u, dtype=float))


def _directions(u, d: int) -> np.ndarray:
    U = np.atleast_2d(np.asarray(u, dtype=float))
    if U.shape[1] != d:
        raise InvalidDimensionError(f"direction has dimension {U.shape[1]}, expected {d}")
    return U


def _sketch(U: np.ndarray, h: Vector) -> Vector:
    # mean over rows u of u u^T h
    return (U @ h) @ U / U.shape[0]


def learner_update(
    learner: GradientLearner, problem: CompositeProblem, x: Vector, cfg: SmoothingConfig, counter: SzoCounter
) -> GradientLearner:
    """h~ <- h~ + (est(x, u) - u u^T h~) / (d + 2) along the saved direction(s).

    One full pass (2n evaluations) per saved direction.
    """
    d = problem.d
    x = as_vector(x, d)
    h = as_vector(learner.h_tilde, d)
    U = _directions(learner.saved_dir, d)
    est = dir_estimate_full_multi(problem, x, U, cfg, counter)
    h_new = h + (est - _sketch(U, h)) / (d + 2)
    return GradientLearner(h_new, learner.saved_dir)


def reference_gradient(
    learner: GradientLearner,
    problem: CompositeProblem,
    w: Vector,
    fresh_u,
    cfg: SmoothingConfig,
    counter: SzoCounter,
) -> Vector:
    """h~ + est(w, u) - u u^T h~ for a freshly drawn ``u``; leaves ``learner`` untouched.

    The caller is expected to save ``fresh_u`` on the learner afterwards
    (:meth:`GradientLearner.with_direction`).
    """
    d = problem.d
    w = as_vector(w, d)
    h = as_vector(learner.h_tilde, d)
    U = _directions(fresh_u, d)
    est = dir_estimate_full_multi(problem, w, U, cfg, counter)
    return h + est - _sketch(U, h)
