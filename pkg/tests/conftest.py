import numpy as np
import pytest

from zpdvr.data import logistic_problem, make_quadratic_lasso, make_synthetic_classification
from zpdvr.objective import CallableProblem, QuadraticLassoProblem
from zpdvr.reference import compute_reference_optimum


def linear_problem(C, lam1=0.0):
    """Components f_i(x) = C[i] . x; exact directional derivatives for any v."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, d = C.shape
    return CallableProblem(lambda i, x: float(C[i] @ x), n, d, L=1.0, mu=0.0, lam1=lam1, gradient=lambda i, x: C[i].copy())


def identity_quadratic(n, d, lam1=0.0):
    """f_i(x) = 0.5 ||x||^2 for every component."""
    return QuadraticLassoProblem(np.ones((n, d)), np.zeros((n, d)), lam1=lam1)


def one_dim_problem():
    """f(x) = 0.5 (x - 2)^2 with lam1 = 1; minimizer x* = 1, F* = 1.5."""
    return QuadraticLassoProblem(np.ones((1, 1)), np.full((1, 1), 2.0), lam1=1.0, c=[2.0])


@pytest.fixture(scope="session")
def quad100():
    """The n=100, d=20, kappa=20 testbed with its reference optimum."""
    prob = make_quadratic_lasso(100, 20, 20, 0.1, seed=0)
    x_star, f_star = compute_reference_optimum(prob)
    return prob, x_star, f_star


@pytest.fixture(scope="session")
def small_logistic():
    ds = make_synthetic_classification(50, 10, density=0.5, seed=0, binary=False)
    return logistic_problem(ds, 0.0, 1e-2)


@pytest.fixture(scope="session")
def small_quad():
    prob = make_quadratic_lasso(20, 5, 5, 0.1, seed=0)
    x_star, f_star = compute_reference_optimum(prob)
    return prob, x_star, f_star


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
