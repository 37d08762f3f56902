import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_problem
from zpdvr.core import seeded_rng
from zpdvr.errors import InvalidDimensionError
from zpdvr.estimators import SmoothingConfig, dir_estimate_full
from zpdvr.objective import SzoCounter
from zpdvr.trackers import GradientLearner, learner_update, reference_gradient

CFG = SmoothingConfig(1e-3)


def test_learner_fixed_point_on_linear():
    c = np.array([1.0, -2.0, 0.5])
    prob = linear_problem(np.tile(c, (3, 1)))
    lr = GradientLearner(c.copy(), np.array([0.2, 1.0, -0.7]))
    out = learner_update(lr, prob, np.ones(3), CFG, SzoCounter())
    assert np.allclose(out.h_tilde, c, atol=1e-12)


def test_learner_hand_example():
    prob = linear_problem(np.array([[1.0, 2.0]]))
    lr = GradientLearner(np.zeros(2), np.array([1.0, 1.0]))
    counter = SzoCounter()
    out = learner_update(lr, prob, np.zeros(2), CFG, counter)
    assert np.allclose(out.h_tilde, [0.75, 0.75], atol=1e-12)
    assert counter.count == 2 * 1


def test_learner_cost_is_two_n():
    prob = linear_problem(np.ones((7, 3)))
    counter = SzoCounter()
    learner_update(GradientLearner(np.zeros(3), np.ones(3)), prob, np.zeros(3), CFG, counter)
    assert counter.count == 14


def test_learner_does_not_mutate_input():
    prob = linear_problem(np.array([[1.0, 2.0]]))
    h = np.array([0.1, 0.2])
    lr = GradientLearner(h, np.array([1.0, -1.0]))
    out = learner_update(lr, prob, np.zeros(2), CFG, SzoCounter())
    assert h.tolist() == [0.1, 0.2]
    assert out.saved_dir is lr.saved_dir


@pytest.mark.parametrize("d", [3, 6])
def test_learner_geometric_convergence(d):
    rng = seeded_rng(100 + d)
    c = rng.standard_normal(d)
    prob = linear_problem(c[None, :])
    limit = math.ceil(10 * (d + 2) * math.log(np.linalg.norm(c) / 1e-6))
    hits = 0
    for seed in range(40):
        r = seeded_rng(seed, stream=d)
        lr = GradientLearner.zeros(d)
        for _ in range(limit):
            lr = learner_update(lr.with_direction(r.standard_normal(d)), prob, np.zeros(d), CFG, SzoCounter())
            if np.linalg.norm(lr.h_tilde - c) < 1e-6:
                hits += 1
                break
    assert hits >= 0.95 * 40


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_sketch_consistency(seed, d):
    rng = seeded_rng(seed)
    c, h, u = rng.standard_normal((3, d))
    prob = linear_problem(c[None, :])
    out = learner_update(GradientLearner(h, u), prob, np.zeros(d), SmoothingConfig(0.5), SzoCounter())
    lhs = u @ (out.h_tilde - c)
    rhs = (1 - (u @ u) / (d + 2)) * (u @ (h - c))
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(u @ (h - c))) * (1 + u @ u)


@pytest.mark.parametrize("d", [3, 10])
def test_expected_contraction(d):
    c = seeded_rng(7).standard_normal(d)
    prob = linear_problem(c[None, :])
    seeds = 1000
    H = np.tile(seeded_rng(8).standard_normal(d), (seeds, 1))
    rngs = [seeded_rng(s, stream=11) for s in range(seeds)]
    for _ in range(4):
        before = np.mean(np.sum((H - c) ** 2, axis=1))
        for s in range(seeds):
            lr = GradientLearner(H[s], rngs[s].standard_normal(d))
            H[s] = learner_update(lr, prob, np.zeros(d), CFG, SzoCounter()).h_tilde
        after = np.mean(np.sum((H - c) ** 2, axis=1))
        assert after <= (1 - 1 / (2 * (d + 2))) * before + 1e-12


def test_reference_gradient_linear():
    c = np.array([0.5, -1.0, 2.0])
    prob = linear_problem(np.tile(c, (2, 1)))
    u = np.array([1.0, 0.3, -0.2])
    counter = SzoCounter()
    assert np.allclose(reference_gradient(GradientLearner(c.copy(), u), prob, np.ones(3), u, CFG, counter), c, atol=1e-12)
    assert counter.count == 4
    h = np.array([3.0, 0.0, -1.0])
    out = reference_gradient(GradientLearner(h, u), prob, np.ones(3), u, CFG, SzoCounter())
    assert np.allclose(out, h + (c @ u) * u - (h @ u) * u, atol=1e-12)


def test_reference_gradient_zero_learner(small_logistic):
    rng = seeded_rng(2)
    w, u = rng.standard_normal((2, 10))
    ref = reference_gradient(GradientLearner.zeros(10), small_logistic, w, u, CFG, SzoCounter())
    assert np.array_equal(ref, dir_estimate_full(small_logistic, w, u, CFG, SzoCounter()))


def test_reference_gradient_pure(small_logistic):
    h = np.arange(10.0)
    lr = GradientLearner(h, np.zeros(10))
    reference_gradient(lr, small_logistic, np.zeros(10), np.ones(10), CFG, SzoCounter())
    assert np.array_equal(lr.h_tilde, np.arange(10.0))


def test_reference_gradient_unbiased(small_logistic):
    prob = small_logistic
    rng = seeded_rng(9)
    w, h = rng.standard_normal((2, 10))
    N = 200_000
    U = rng.standard_normal((N, 10))
    # vectorized replica of reference_gradient over many fresh directions
    slopes = (prob._all_values(w + CFG.v * U).mean(axis=1) - prob.smooth_value(w)) / CFG.v
    refs = h + (slopes - U @ h)[:, None] * U
    spot = reference_gradient(GradientLearner(h, U[0]), prob, w, U[0], CFG, SzoCounter())
    assert np.allclose(spot, refs[0], rtol=1e-9, atol=1e-9)
    se = math.sqrt(refs.var(axis=0).sum() / N)
    bound = 0.5 * prob.L * CFG.v * (10 + 3) ** 1.5
    assert np.linalg.norm(refs.mean(axis=0) - prob.full_grad(w)) <= bound + 3 * se


def test_dimension_mismatch():
    prob = linear_problem(np.ones((1, 3)))
    with pytest.raises(InvalidDimensionError):
        learner_update(GradientLearner(np.zeros(3), np.ones(2)), prob, np.zeros(3), CFG, SzoCounter())
    with pytest.raises(InvalidDimensionError):
        reference_gradient(GradientLearner.zeros(3), prob, np.zeros(3), np.ones(4), CFG, SzoCounter())
