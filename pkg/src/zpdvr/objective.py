"""Composite objectives F = (1/n) sum_i f_i + lam1 * ||x||_1 with metered evaluations.

Every algorithm sees a problem only through the metered helpers
(:func:`eval_component`, :func:`eval_pairs`, :func:`eval_full`), each of
which charges an :class:`SzoCounter` one unit per component evaluation.
Analytic gradients and :func:`full_objective` are oracle/reporting paths and
never touch a counter.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.special import expit

from .core import SparseRow, Vector, as_vector, soft_threshold
from .errors import (
    BudgetExhausted,
    ComponentIndexError,
    GradientUnavailableError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidStepError,
)

# dense copy of the design matrix is kept for fast row gathers below this size
_DENSE_CACHE_LIMIT = 20_000_000


class SzoCounter:
    """Monotone count of single-component function evaluations.

    ``budget`` is optional; :meth:`require` raises :class:`BudgetExhausted`
    when ``k`` more evaluations would exceed it. Increments are locked so a
    counter may be shared by threads evaluating parts of one batch.
    """

    def __init__(self, budget: int | None = None):
        self.count = 0
        self.budget = budget
        self._lock = threading.Lock()

    def add(self, k: int) -> None:
        if k < 0:
            raise ValueError("SZO increments are nonnegative")
        with self._lock:
            self.count += int(k)

    def require(self, k: int) -> None:
        if self.budget is not None and self.count + k > self.budget:
            raise BudgetExhausted(
                f"{k} more evaluations would exceed budget {self.budget} (used {self.count})"
            )

    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.count

    def __repr__(self):
        return f"SzoCounter(count={self.count}, budget={self.budget})"


class CompositeProblem:
    """Base class. Subclasses implement the raw (unmetered) batch evaluators.

    ``_pair_values(idx, X)`` returns ``f_{idx[j]}(X[j])`` for each row ``j``;
    ``_all_values(X)`` returns the ``(k, n)`` table ``f_i(X[j])``.
    """

    n: int
    d: int
    L: float
    mu: float
    lam1: float
    has_gradient: bool = False

    def _check_constants(self):
        if self.n < 1:
            raise InvalidDimensionError("problem needs at least one component")
        if self.d < 1:
            raise InvalidDimensionError("problem dimension must be >= 1")
        if not (self.L > 0 and 0 <= self.mu <= self.L):
            raise InvalidInputError(f"need 0 <= mu <= L and L > 0 (L={self.L}, mu={self.mu})")
        if self.lam1 < 0:
            raise InvalidInputError("lam1 must be nonnegative")

    @property
    def kappa(self) -> float:
        return self.L / self.mu if self.mu > 0 else float("inf")

    @property
    def L_avg(self) -> float:
        """Smoothness of the averaged f (never larger than ``L``)."""
        return self.L

    def _pair_values(self, idx: NDArray[np.int64], X: NDArray[np.float64]) -> NDArray[np.float64]:
        raise NotImplementedError

    def _all_values(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        raise NotImplementedError

    def component_grad(self, i: int, x: Vector) -> Vector:
        raise GradientUnavailableError(f"{type(self).__name__} has no analytic gradient")

    def component_grads(self, x: Vector) -> NDArray[np.float64]:
        """All component gradients at ``x`` as an ``(n, d)`` array."""
        return np.stack([self.component_grad(i, x) for i in range(self.n)])

    def full_grad(self, x: Vector) -> Vector:
        return self.component_grads(x).mean(axis=0)

    def smooth_value(self, x: Vector) -> float:
        return float(np.mean(self._all_values(np.asarray(x, dtype=float)[None, :])[0]))

    def psi(self, x: Vector) -> float:
        return self.lam1 * float(np.sum(np.abs(x)))


class QuadraticLassoProblem(CompositeProblem):
    """f_i(x) = 0.5 x^T A_i x - b_i^T x + c_i with SPD A_i, plus lam1 * ||x||_1.

    ``A`` is either ``(n, d)`` (diagonal entries) or ``(n, d, d)``; the
    optional constants ``c`` (default zero) only shift objective values.
    """

    has_gradient = True

    def __init__(self, A, b, lam1: float = 0.0, c=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if b.ndim != 2:
            raise InvalidDimensionError("b must have shape (n, d)")
        self.n, self.d = b.shape
        self.c = np.zeros(self.n) if c is None else np.asarray(c, dtype=float).reshape(self.n)
        self.diagonal = A.ndim == 2
        if self.diagonal:
            if A.shape != b.shape:
                raise InvalidDimensionError("diagonal A must have the same shape as b")
            eig_lo, eig_hi = A.min(axis=1), A.max(axis=1)
        else:
            if A.shape != (self.n, self.d, self.d):
                raise InvalidDimensionError("full A must have shape (n, d, d)")
            if not np.allclose(A, np.swapaxes(A, 1, 2)):
                raise InvalidInputError("A_i must be symmetric")
            eigs = np.linalg.eigvalsh(A)
            eig_lo, eig_hi = eigs[:, 0], eigs[:, -1]
        if np.any(eig_lo <= 0):
            raise InvalidInputError("A_i must be positive definite")
        self.A = A
        self.b = b
        self.lam1 = float(lam1)
        self.L = float(eig_hi.max())
        self.mu = float(eig_lo.min())
        self.A_mean = A.mean(axis=0)
        self.b_mean = b.mean(axis=0)
        self._check_constants()

    @property
    def L_avg(self) -> float:
        if self.diagonal:
            return float(self.A_mean.max())
        return float(np.linalg.eigvalsh(self.A_mean)[-1])

    def _pair_values(self, idx, X):
        if self.diagonal:
            return np.einsum("ij,ij->i", 0.5 * self.A[idx] * X - self.b[idx], X) + self.c[idx]
        AX = np.einsum("ijk,ik->ij", self.A[idx], X)
        return np.einsum("ij,ij->i", 0.5 * AX - self.b[idx], X) + self.c[idx]

    def _all_values(self, X):
        if self.diagonal:
            return 0.5 * (X * X) @ self.A.T - X @ self.b.T + self.c
        quad = np.einsum("kj,ijl,kl->ki", X, self.A, X)
        return 0.5 * quad - X @ self.b.T + self.c

    def component_grad(self, i, x):
        x = np.asarray(x, dtype=float)
        if self.diagonal:
            return self.A[i] * x - self.b[i]
        return self.A[i] @ x - self.b[i]

    def component_grads(self, x):
        x = np.asarray(x, dtype=float)
        if self.diagonal:
            return self.A * x - self.b
        return self.A @ x - self.b

    def full_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.diagonal:
            return self.A_mean * x - self.b_mean
        return self.A_mean @ x - self.b_mean


def _logistic_loss(t):
    # log(1 + exp(-t)) without overflow for large |t|
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(-t, 0.0)


class LogisticProblem(CompositeProblem):
    """Regularized cross-entropy: f_i(x) = log(1 + exp(-y_i x^T z_i)) + lam2/2 ||x||^2."""

    has_gradient = True

    def __init__(self, Z, y, lam1: float = 0.0, lam2: float = 0.0):
        self.Z = sp.csr_matrix(Z, dtype=float)
        self.Z.sort_indices()
        self.y = np.asarray(y, dtype=float)
        self.n, self.d = self.Z.shape
        if self.y.shape != (self.n,):
            raise InvalidDimensionError("labels must have one entry per row")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise InvalidInputError("labels must be -1 or +1")
        if not np.all(np.isfinite(self.Z.data)):
            raise InvalidInputError("features must be finite")
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)
        row_sq = np.asarray(self.Z.multiply(self.Z).sum(axis=1)).ravel()
        self.L = float(row_sq.max() / 4.0 + self.lam2)
        if self.L <= 0:
            raise InvalidInputError("all feature rows are zero and lam2 = 0")
        self.mu = self.lam2
        self._dense = self.Z.toarray() if self.n * self.d <= _DENSE_CACHE_LIMIT else None
        self._L_avg = None
        self._check_constants()

    @classmethod
    def from_rows(cls, rows: list[SparseRow], labels, lam1=0.0, lam2=0.0, d: int | None = None):
        d = d if d is not None else max(r.dim for r in rows)
        indptr = np.concatenate([[0], np.cumsum([r.nnz for r in rows])])
        indices = np.concatenate([r.indices for r in rows]) if rows else np.zeros(0, np.int64)
        data = np.concatenate([r.values for r in rows]) if rows else np.zeros(0)
        Z = sp.csr_matrix((data, indices, indptr), shape=(len(rows), d))
        return cls(Z, labels, lam1=lam1, lam2=lam2)

    @property
    def rows(self) -> list[SparseRow]:
        Z = self.Z
        return [
            SparseRow(Z.indices[Z.indptr[i]:Z.indptr[i + 1]], Z.data[Z.indptr[i]:Z.indptr[i + 1]], self.d)
            for i in range(self.n)
        ]

    @property
    def L_avg(self) -> float:
        if self._L_avg is None:
            from scipy.sparse.linalg import eigsh

            if self.d <= 500:
                top = np.linalg.eigvalsh((self.Z.T @ self.Z).toarray())[-1]
            else:
                top = eigsh(self.Z.T @ self.Z, k=1, which="LA", return_eigenvectors=False)[0]
            # small safety margin against eigensolver error
            self._L_avg = float(min(self.L, 1.0001 * top / (4.0 * self.n) + self.lam2))
        return self._L_avg

    def _margins(self, idx, X):
        if self._dense is not None:
            return np.einsum("ij,ij->i", self._dense[idx], X)
        return np.asarray(self.Z[idx].multiply(X).sum(axis=1)).ravel()

    def _pair_values(self, idx, X):
        t = self.y[idx] * self._margins(idx, X)
        return _logistic_loss(t) + 0.5 * self.lam2 * np.einsum("ij,ij->i", X, X)

    def _all_values(self, X):
        M = np.asarray(self.Z @ X.T)  # (n, k)
        out = _logistic_loss(self.y[:, None] * M).T
        return out + 0.5 * self.lam2 * np.einsum("ij,ij->i", X, X)[:, None]

    def component_grad(self, i, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.Z.indptr[i], self.Z.indptr[i + 1]
        cols, vals = self.Z.indices[lo:hi], self.Z.data[lo:hi]
        t = self.y[i] * float(vals @ x[cols])
        g = self.lam2 * x
        g[cols] += -self.y[i] * expit(-t) * vals
        return g

    def component_grads(self, x):
        x = np.asarray(x, dtype=float)
        t = self.y * (self.Z @ x)
        coef = -self.y * expit(-t)
        return np.asarray(self.Z.multiply(coef[:, None]).toarray()) + self.lam2 * x

    def full_grad(self, x):
        x = np.asarray(x, dtype=float)
        t = self.y * (self.Z @ x)
        coef = -self.y * expit(-t)
        return (self.Z.T @ coef) / self.n + self.lam2 * x

    def smooth_value(self, x):
        x = np.asarray(x, dtype=float)
        t = self.y * (self.Z @ x)
        return float(np.mean(_logistic_loss(t)) + 0.5 * self.lam2 * (x @ x))


class CallableProblem(CompositeProblem):
    """Black-box components given as ``component(i, x) -> float``.

    The constants ``L`` and ``mu`` are taken on trust. ``gradient(i, x)``
    is optional and only used by oracle diagnostics.
    """

    def __init__(
        self,
        component: Callable[[int, Vector], float],
        n: int,
        d: int,
        L: float,
        mu: float,
        lam1: float = 0.0,
        gradient: Callable[[int, Vector], Vector] | None = None,
    ):
        self.component = component
        self.gradient = gradient
        self.n, self.d = int(n), int(d)
        self.L, self.mu, self.lam1 = float(L), float(mu), float(lam1)
        self.has_gradient = gradient is not None
        self._check_constants()

    def _pair_values(self, idx, X):
        return np.array([float(self.component(int(i), x)) for i, x in zip(idx, X)])

    def _all_values(self, X):
        return np.array([[float(self.component(i, x)) for i in range(self.n)] for x in X])

    def component_grad(self, i, x):
        if self.gradient is None:
            raise GradientUnavailableError("no analytic gradient supplied")
        return np.asarray(self.gradient(i, np.asarray(x, dtype=float)), dtype=float)


def _check_index(problem: CompositeProblem, i) -> int:
    i = int(i)
    if not 0 <= i < problem.n:
        raise ComponentIndexError(f"component index {i} out of range [0, {problem.n})")
    return i


def eval_component(problem: CompositeProblem, i: int, x: Vector, counter: SzoCounter) -> float:
    i = _check_index(problem, i)
    x = as_vector(x, problem.d)
    value = float(problem._pair_values(np.array([i]), x[None, :])[0])
    counter.add(1)
    return value


def eval_pairs(problem: CompositeProblem, idx, X, counter: SzoCounter) -> NDArray[np.float64]:
    """``f_{idx[j]}(X[j])`` for every row; charges ``len(idx)``."""
    idx = np.asarray(idx, dtype=np.int64)
    X = np.asarray(X, dtype=float)
    if X.shape != (idx.size, problem.d):
        raise InvalidDimensionError(f"expected points of shape ({idx.size}, {problem.d}), got {X.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= problem.n):
        raise ComponentIndexError("component index out of range")
    out = problem._pair_values(idx, X)
    counter.add(idx.size)
    return out


def eval_full(problem: CompositeProblem, X, counter: SzoCounter) -> NDArray[np.float64]:
    """Table ``f_i(X[j])`` of shape ``(k, n)``; charges ``k * n``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != problem.d:
        raise InvalidDimensionError(f"expected points of dimension {problem.d}, got {X.shape[1]}")
    out = problem._all_values(X)
    counter.add(X.shape[0] * problem.n)
    return out


def analytic_component_grad(problem: CompositeProblem, i: int, x: Vector) -> Vector:
    i = _check_index(problem, i)
    return problem.component_grad(i, as_vector(x, problem.d))


def prox_step(problem: CompositeProblem, x: Vector, eta: float) -> Vector:
    """argmin_z lam1*||z||_1 + ||z - x||^2 / (2 eta)."""
    if not eta > 0:
        raise InvalidStepError(f"step size must be positive, got {eta}")
    return soft_threshold(x, eta * problem.lam1)


def full_objective(problem: CompositeProblem, x: Vector) -> float:
    x = as_vector(x, problem.d)
    return problem.smooth_value(x) + problem.psi(x)
