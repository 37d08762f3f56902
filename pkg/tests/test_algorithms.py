import math

import numpy as np
import pytest

from conftest import linear_problem, one_dim_problem
from zpdvr.algorithms import (
    Pgd,
    RunHistory,
    Sega,
    Zpdvr,
    ZpdvrConfig,
    Zpsvrg,
    make_optimizer,
    pgd_run,
    run,
    zpdvr_run,
    zpsvrg_run,
)
from zpdvr.data import make_quadratic_lasso
from zpdvr.errors import BudgetExhausted, ConfigError, InvalidStepError
from zpdvr.objective import SzoCounter, full_objective, prox_step
from zpdvr.reference import compute_reference_optimum
from zpdvr.theory import theoretical_schedule


def _deltas(opt, steps):
    counter = SzoCounter()
    out = []
    for _ in range(steps):
        before = counter.count
        pending = getattr(opt, "state", None)
        opt.step(counter)
        out.append((counter.count - before, pending))
    return out


# --------------------------------------------------------------------------- ZPDVR


def test_config_validation():
    with pytest.raises(InvalidStepError):
        ZpdvrConfig(eta=0.0)
    for p in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigError):
            ZpdvrConfig(eta=0.1, p=p)
    with pytest.raises(ConfigError):
        ZpdvrConfig(eta=0.1, refresh="weekly")
    assert ZpdvrConfig(eta=0.1).refresh_probability(40) == 1 / 40


def test_zpdvr_first_step_uses_reference(small_quad):
    prob = small_quad[0]
    opt = Zpdvr(prob, ZpdvrConfig(eta=0.01, v=1e-4, seed=3), x0=np.ones(prob.d))
    opt.step(SzoCounter())
    ref = opt.state.cached_ref_grad
    assert np.array_equal(opt.x, prox_step(prob, np.ones(prob.d) - 0.01 * ref, 0.01))


def test_zpdvr_exact_szo_counts(small_quad):
    prob = small_quad[0]
    n = prob.n
    opt = Zpdvr(prob, ZpdvrConfig(eta=0.01, p=0.3, v=1e-4, seed=1))
    fired_seen = refresh_seen = 0
    prev_fired = True  # the first step always computes the reference
    counter = SzoCounter()
    for _ in range(300):
        before = counter.count
        opt.step(counter)
        fired = opt.state.needs_refresh
        expected = 4 + (2 * n if prev_fired else 0) + (2 * n if fired else 0)
        assert counter.count - before == expected
        fired_seen += fired
        refresh_seen += prev_fired
        prev_fired = fired
    assert 0 < fired_seen < 300


def test_zpdvr_no_coin_branch_is_bitwise_stable(small_quad):
    prob = small_quad[0]
    opt = Zpdvr(prob, ZpdvrConfig(eta=0.01, p=0.2, v=1e-4, seed=5))
    counter = SzoCounter()
    opt.step(counter)
    checked = 0
    for _ in range(200):
        before = opt.state
        opt.step(counter)
        if not opt.state.needs_refresh:
            assert opt.state.w is before.w
            assert np.array_equal(opt.state.learner.h_tilde, before.learner.h_tilde)
            checked += 1
        else:
            assert np.array_equal(opt.state.w, before.x)
    assert checked > 100


def test_zpdvr_p_one_counts(small_quad):
    prob = small_quad[0]
    n = prob.n
    opt = Zpdvr(prob, ZpdvrConfig(eta=0.01, p=1.0, v=1e-4, seed=0))
    counter = SzoCounter()
    for k in range(20):
        before, x_prev = counter.count, opt.x
        opt.step(counter)
        assert counter.count - before == 4 + 4 * n
        assert np.array_equal(opt.state.w, x_prev)


def test_zpdvr_periodic_refresh(small_quad):
    prob = small_quad[0]
    cfg = ZpdvrConfig(eta=0.01, v=1e-4, refresh="periodic", period=5)
    opt = Zpdvr(prob, cfg)
    counter = SzoCounter()
    fires = []
    for _ in range(20):
        cost = opt.max_step_cost()
        before = counter.count
        opt.step(counter)
        assert counter.count - before == cost
        fires.append(opt.state.needs_refresh)
    assert [i + 1 for i, f in enumerate(fires) if f] == [5, 10, 15, 20]


def test_zpdvr_budget_signal(small_quad):
    prob = small_quad[0]
    opt = Zpdvr(prob, ZpdvrConfig(eta=0.01))
    with pytest.raises(BudgetExhausted):
        opt.step(SzoCounter(budget=10))


def test_zpdvr_converges_on_small_problem(small_quad):
    prob, _, f_star = small_quad
    eta = theoretical_schedule(prob, 1e-6).eta
    cfg = ZpdvrConfig(eta=eta, v=1e-6, seed=0, budget=200_000)
    hist = zpdvr_run(prob, cfg, reference_optimum=f_star, sample_every=500)
    assert hist.residual[-1] < 1e-6 * hist.residual[0]


# --------------------------------------------------------------------------- PGD


def test_pgd_one_dim_step():
    opt = Pgd(one_dim_problem(), 0.5, v=1e-8)
    counter = SzoCounter()
    opt.step(counter)
    assert opt.x[0] == pytest.approx(0.5, abs=1e-6)
    assert counter.count == 1 * (1 + 1)


def test_pgd_cost_per_iteration(small_quad):
    prob = small_quad[0]
    for delta, _ in _deltas(Pgd(prob, 0.01), 5):
        assert delta == prob.n * (prob.d + 1)


def test_pgd_unregularized_convergence():
    prob = make_quadratic_lasso(10, 5, 10, 0.0, seed=2)
    x_star, _ = compute_reference_optimum(prob, tol=1e-12)
    eta = 1.0 / prob.L
    kappa = prob.L / prob.mu
    opt = Pgd(prob, eta, v=1e-9)
    counter = SzoCounter()
    limit = math.ceil(2 * kappa * math.log(1e8))
    for k in range(limit):
        opt.step(counter)
        if np.linalg.norm(opt.x - x_star) <= 1e-6:
            break
    assert np.linalg.norm(opt.x - x_star) <= 1e-6


def test_pgd_monotone_decrease(small_quad):
    prob, _, f_star = small_quad
    hist = pgd_run(prob, 1.0 / prob.L, 1e-7, 60 * prob.n * (prob.d + 1), reference_optimum=f_star)
    obj = np.array(hist.objective)
    slack = prob.L * 1e-7 * prob.d
    assert np.all(np.diff(obj) <= slack)


# --------------------------------------------------------------------------- ZPSVRG


def test_zpsvrg_m1_gives_snapshot_gradient(small_quad):
    prob = small_quad[0]
    x0 = np.full(prob.d, 0.3)
    opt = Zpsvrg(prob, 0.01, 1, v=1e-4, seed=4, x0=x0)
    opt.step(SzoCounter())
    assert np.array_equal(opt.x, prox_step(prob, x0 - 0.01 * opt.mu_hat, 0.01))


def test_zpsvrg_cycle_cost(small_quad):
    prob = small_quad[0]
    m = 7
    counter = SzoCounter()
    opt = Zpsvrg(prob, 0.01, m)
    for cycle in range(1, 4):
        for _ in range(m):
            opt.step(counter)
        assert counter.count == cycle * (2 * prob.n + 4 * m)


def test_zpsvrg_rejects_bad_m(small_quad):
    with pytest.raises(ConfigError):
        Zpsvrg(small_quad[0], 0.01, 0)


def test_zpsvrg_plateau(small_quad):
    prob, _, f_star = small_quad
    T = 100_000
    hists = [zpsvrg_run(prob, 0.01, 1e-6, 20, 2 * T, reference_optimum=f_star, sample_every=100, seed=s) for s in range(2)]
    at_t = np.median([h.residual_at(T) for h in hists])
    at_2t = np.median([h.residual[-1] for h in hists])
    assert at_2t > 0 and at_t / at_2t <= 5


# --------------------------------------------------------------------------- SEGA


def test_sega_linear_fixed_point():
    c = np.array([1.0, -2.0, 0.5])
    prob = linear_problem(np.tile(c, (4, 1)))
    opt = Sega(prob, 0.1, v=1e-3, seed=0)
    opt.h = c.copy()
    opt.step(SzoCounter())
    assert np.allclose(opt.h, c, atol=1e-12)
    assert np.allclose(opt.x, -0.1 * c, atol=1e-12)


def test_sega_one_dim_exact():
    opt = Sega(one_dim_problem(), 0.1, v=1e-8, seed=0)
    opt.step(SzoCounter())
    assert opt.h[0] == pytest.approx(-2.0, abs=1e-6)


def test_sega_cost(small_quad):
    prob = small_quad[0]
    for delta, _ in _deltas(Sega(prob, 0.01), 5):
        assert delta == 2 * prob.n


# --------------------------------------------------------------------------- driver


@pytest.mark.parametrize("name,params", [
    ("zpdvr", {"eta": 0.01}),
    ("zpsvrg", {"eta": 0.01, "m": 10}),
    ("sega", {"eta": 0.01}),
    ("pgd", {"eta": 0.01}),
])
def test_run_contract(small_quad, name, params):
    prob, _, f_star = small_quad
    zero = run(make_optimizer(name, prob, params), 0, f_star)
    assert len(zero) == 1 and zero.szo == [0] and zero.iters == [0]
    a = run(make_optimizer(name, prob, params, seed=9), 30_000, f_star, sample_every=3)
    b = run(make_optimizer(name, prob, params, seed=9), 30_000, f_star, sample_every=3)
    assert np.all(np.diff(a.szo) > 0)
    assert a.szo[-1] <= 30_000
    assert a.to_csv_text() == b.to_csv_text()
    assert np.array_equal(a.final_x, b.final_x)
    assert min(a.residual) >= -1e-9


def test_csv_round_trip(tmp_path, small_quad):
    prob, _, f_star = small_quad
    hist = run(make_optimizer("zpdvr", prob, {"eta": 0.01}), 5000, f_star)
    path = tmp_path / "h.csv"
    hist.to_csv(path)
    back = RunHistory.from_csv(path)
    assert back.to_csv_text() == hist.to_csv_text()
    assert back.residual_at(hist.szo[-1]) == hist.residual[-1]
    with pytest.raises(ValueError):
        RunHistory().residual_at(0)


def test_run_stops_on_divergence(small_quad):
    prob, _, f_star = small_quad
    hist = run(make_optimizer("pgd", prob, {"eta": 10.0 / prob.L}), 10**7, f_star, stop_above=1e6)
    assert hist.residual[-1] > 1e6 or not math.isfinite(hist.objective[-1])
    assert hist.szo[-1] < 10**7 // 10


def test_run_stop_residual(small_quad):
    prob, _, f_star = small_quad
    hist = run(make_optimizer("pgd", prob, {"eta": 1.0 / prob.L, "v": 1e-7}), 10**7, f_star, stop_residual=1e-3)
    assert hist.residual[-1] <= 1e-3
    assert all(r > 1e-3 for r in hist.residual[:-1])


def test_make_optimizer_errors(small_quad):
    prob = small_quad[0]
    with pytest.raises(ConfigError):
        make_optimizer("adam", prob, {"eta": 0.1})
    with pytest.raises(ConfigError):
        make_optimizer("pgd", prob, {})
    with pytest.raises(ConfigError):
        make_optimizer("sega", prob, {"eta": 0.1, "momentum": 0.9})
    with pytest.raises(ConfigError):
        zpdvr_run(prob, ZpdvrConfig(eta=0.1))


def test_reporting_is_free(small_quad):
    prob, _, f_star = small_quad
    counter = SzoCounter()
    hist = run(make_optimizer("sega", prob, {"eta": 0.01}), 10 * 2 * prob.n, f_star, counter=counter)
    assert counter.count == hist.szo[-1] == 10 * 2 * prob.n
    assert hist.objective[-1] == full_objective(prob, hist.final_x)
