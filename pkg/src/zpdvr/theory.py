"""Theoretical parameter schedule, Lyapunov function, and Monte-Carlo validators.

Every ``mc_*`` check returns an :class:`MCResult` holding the measured
statistic, the bound it is compared against, and the standard error used to
widen that bound. Standard errors of vector means are reported as
``sqrt(trace(Cov) / N)``, the root-mean-square size of the sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .algorithms import Zpdvr, ZpdvrConfig
from .core import SeededRng, Vector, as_vector, seeded_rng
from .errors import GradientUnavailableError, InvalidDimensionError, InvalidInputError, NotStronglyConvexError
from .objective import CompositeProblem, SzoCounter
from .trackers import GradientLearner

MIN_DRAWS = 100_000
_CHUNK = 20_000


@dataclass(frozen=True)
class TheorySchedule:
    eta: float
    alpha: float
    beta: float
    p: float
    theta: float
    delta_floor: float
    sigma: float
    contraction: float


def theoretical_schedule(problem: CompositeProblem, v: float) -> TheorySchedule:
    """Step size, Lyapunov weights, rate and floor constants for ``problem`` at smoothing ``v``."""
    if not problem.mu > 0:
        raise NotStronglyConvexError("the schedule needs mu > 0")
    if not v > 0:
        raise InvalidInputError(f"smoothing constant must be positive, got {v}")
    n, d, kappa = problem.n, problem.d, problem.kappa
    eta = 1.0 / ((40 * d + 63) * problem.L)
    a = 80 * d + 126
    b = 4 * n * (d + 2)
    v2 = v * v
    return TheorySchedule(
        eta=eta,
        alpha=8 * n * (d + 2) * (2 * d + 3) * eta**2,
        beta=8 * n * (2 * d + 3) * eta**2,
        p=1.0 / n,
        theta=1.0 / (kappa * a + b),
        delta_floor=2 * (d + 3) ** 3 * v2 * kappa / (40 * d + 63) + 8 * (5 * d + 8) * (d + 6) ** 3 * v2 / (40 * d + 63) ** 2,
        sigma=(a + b) * kappa * (kappa + 1) * (d + 6) ** 2 * v2,
        contraction=max(1.0 - 1.0 / (kappa * a), 1.0 - 1.0 / b),
    )


# --------------------------------------------------------------------------- Lyapunov function


@dataclass(frozen=True)
class LyapunovSnapshot:
    term_x: float
    term_h: float
    term_w: float
    psi: float


def lyapunov(
    problem: CompositeProblem,
    x: Vector,
    h_tilde: Vector,
    w: Vector,
    x_star: Vector,
    schedule: TheorySchedule,
    grad_star_components=None,
) -> LyapunovSnapshot:
    """||x - x*||^2 + alpha ||h - grad f(x*)||^2 + (beta / n) sum_i ||grad f_i(w) - grad f_i(x*)||^2.

    ``grad_star_components`` (shape ``(n, d)``) may be passed to avoid
    recomputing the component gradients at ``x_star``.
    """
    if not problem.has_gradient:
        raise GradientUnavailableError("the Lyapunov function needs analytic gradients")
    d = problem.d
    x, h_tilde, w, x_star = (as_vector(a, d) for a in (x, h_tilde, w, x_star))
    if grad_star_components is None:
        grad_star_components = problem.component_grads(x_star)
    G_star = np.asarray(grad_star_components, dtype=float)
    if G_star.shape != (problem.n, d):
        raise InvalidDimensionError(f"component gradients must have shape {(problem.n, d)}")
    term_x = float(np.sum((x - x_star) ** 2))
    term_h = schedule.alpha * float(np.sum((h_tilde - G_star.mean(axis=0)) ** 2))
    term_w = schedule.beta * float(np.sum((problem.component_grads(w) - G_star) ** 2)) / problem.n
    return LyapunovSnapshot(term_x, term_h, term_w, term_x + term_h + term_w)


# --------------------------------------------------------------------------- Monte-Carlo checks


@dataclass
class MCResult:
    name: str
    passed: bool
    statistic: float
    bound: float
    stderr: float
    draws: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_draws(N: int) -> None:
    if N < MIN_DRAWS:
        raise InvalidInputError(f"need at least {MIN_DRAWS} draws, got {N}")


def _rng(rng) -> SeededRng:
    return seeded_rng(rng) if isinstance(rng, (int, np.integer)) else rng


def _chunks(N: int):
    done = 0
    while done < N:
        k = min(_CHUNK, N - done)
        yield k
        done += k


class _VectorMoments:
    """Streaming sum and sum of squares of vector samples, in draw order."""

    def __init__(self, d: int):
        self.n = 0
        self.s = np.zeros(d)
        self.ss = np.zeros(d)

    def add(self, block: np.ndarray) -> None:
        self.n += block.shape[0]
        self.s += block.sum(axis=0)
        self.ss += np.einsum("ij,ij->j", block, block)

    @property
    def mean(self) -> np.ndarray:
        return self.s / self.n

    @property
    def stderr(self) -> float:
        var = self.ss / self.n - self.mean**2
        return float(math.sqrt(max(float(var.sum()), 0.0) / self.n))


def _scalar_stats(values_sum: float, sq_sum: float, N: int) -> tuple[float, float]:
    mean = values_sum / N
    var = max(sq_sum / N - mean * mean, 0.0)
    return mean, math.sqrt(var / N)


def chi_moment(d: int, q: float) -> float:
    """Exact E||u||^q for u ~ N(0, I_d)."""
    return math.exp(0.5 * q * math.log(2.0) + gammaln((d + q) / 2.0) - gammaln(d / 2.0))


def moment_bounds(d: int, q: float) -> tuple[float, float]:
    """Lower and upper bounds on E||u||^q: [0, d^(q/2)] for q <= 2, [d^(q/2), (q+d)^(q/2)] beyond."""
    if q < 0:
        raise InvalidInputError("q must be >= 0")
    if q <= 2:
        return 0.0, d ** (q / 2)
    return d ** (q / 2), (q + d) ** (q / 2)


def mc_moment_check(d: int, q: float, N: int = 1_000_000, rng=0) -> MCResult:
    """Sample mean of ||u||^q against the Gaussian norm-moment bounds widened by 3 stderr."""
    if d < 1:
        raise InvalidDimensionError("d must be >= 1")
    _check_draws(N)
    rng = _rng(rng)
    total = sq = 0.0
    for k in _chunks(N):
        r = np.sum(rng.standard_normal((k, d)) ** 2, axis=1) ** (q / 2)
        total += float(r.sum())
        sq += float(r @ r)
    mean, se = _scalar_stats(total, sq, N)
    lo, hi = moment_bounds(d, q)
    passed = lo - 3 * se <= mean <= hi + 3 * se
    return MCResult(
        "moments", passed, mean, hi, se, N, {"d": d, "q": q, "lower": lo, "upper": hi, "exact": chi_moment(d, q)}
    )


def mc_projection_identity(d: int, vec, N: int = 1_000_000, rng=0, rel_tol: float = 0.02) -> MCResult:
    """Sample mean of ||u u^T vec||^2 within ``rel_tol`` of (d + 2)||vec||^2."""
    vec = as_vector(vec, d)
    if not np.any(vec):
        raise InvalidInputError("vec must be nonzero")
    _check_draws(N)
    rng = _rng(rng)
    total = sq = 0.0
    for k in _chunks(N):
        U = rng.standard_normal((k, d))
        r = (U @ vec) ** 2 * np.sum(U * U, axis=1)
        total += float(r.sum())
        sq += float(r @ r)
    mean, se = _scalar_stats(total, sq, N)
    target = (d + 2) * float(vec @ vec)
    rel = abs(mean / target - 1.0)
    return MCResult("projection", rel <= rel_tol, mean, target, se, N, {"d": d, "relative_error": rel, "rel_tol": rel_tol})


def _require_gradient(problem: CompositeProblem) -> None:
    if not problem.has_gradient:
        raise GradientUnavailableError("Monte-Carlo bias checks need analytic gradients")


def _dir_estimates(problem: CompositeProblem, x: Vector, U: np.ndarray, v: float, component: int | None):
    """Rows ((f(x + v u) - f(x)) / v) u for each row u of U; ``component`` None uses the full average."""
    k = U.shape[0]
    P = x + v * U
    if component is None:
        slopes = (problem._all_values(P).mean(axis=1) - problem.smooth_value(x)) / v
    else:
        idx = np.full(k, component, dtype=np.int64)
        base = problem._pair_values(idx[:1], x[None, :])[0]
        slopes = (problem._pair_values(idx, P) - base) / v
    return slopes[:, None] * U


def mc_estimator_bias_check(
    problem: CompositeProblem, x: Vector, v: float, N: int = 200_000, rng=0, component: int | None = None
) -> MCResult:
    """||mean of the directional estimate - true gradient|| <= (L v / 2)(d + 3)^{3/2} + 3 stderr.

    ``component`` selects a single f_i; ``None`` checks the full-average estimator.
    """
    _require_gradient(problem)
    _check_draws(N)
    x = as_vector(x, problem.d)
    rng = _rng(rng)
    acc = _VectorMoments(problem.d)
    for k in _chunks(N):
        acc.add(_dir_estimates(problem, x, rng.standard_normal((k, problem.d)), v, component))
    truth = problem.full_grad(x) if component is None else problem.component_grad(component, x)
    err = float(np.linalg.norm(acc.mean - truth))
    bound = 0.5 * problem.L * v * (problem.d + 3) ** 1.5
    se = acc.stderr
    return MCResult("estimator_bias", err <= bound + 3 * se, err, bound, se, N, {"component": component, "v": v})


def mc_second_moment_check(problem: CompositeProblem, x: Vector, v: float, N: int = 200_000, rng=0) -> MCResult:
    """E||g(x, u) - grad f(x)||^2 <= (L^2 v^2 / 2)(d + 6)^3 + 2(d + 1)||grad f(x)||^2 for the full estimator."""
    _require_gradient(problem)
    _check_draws(N)
    x = as_vector(x, problem.d)
    rng = _rng(rng)
    grad = problem.full_grad(x)
    total = sq = 0.0
    for k in _chunks(N):
        r = np.sum((_dir_estimates(problem, x, rng.standard_normal((k, problem.d)), v, None) - grad) ** 2, axis=1)
        total += float(r.sum())
        sq += float(r @ r)
    mean, se = _scalar_stats(total, sq, N)
    d = problem.d
    bound = 0.5 * (problem.L * v) ** 2 * (d + 6) ** 3 + 2 * (d + 1) * float(grad @ grad)
    return MCResult("second_moment", mean <= bound + 3 * se, mean, bound, se, N, {"v": v})


def mc_gk_bias_check(
    problem: CompositeProblem, x: Vector, w: Vector, h_tilde: Vector, v: float, N: int = 200_000, rng=0
) -> MCResult:
    """||mean of g_k - grad f(x)|| <= L v (d + 3)^{3/2} + 3 stderr over independent (u, u_k, i).

    Each draw forms h + g(w, u) - u u^T h with the full-average estimate,
    then adds the component difference g_i(x, u_k) - g_i(w, u_k).
    """
    _require_gradient(problem)
    _check_draws(N)
    d = problem.d
    x, w, h = (as_vector(a, d) for a in (x, w, h_tilde))
    rng = _rng(rng)
    acc = _VectorMoments(d)
    fw = problem.smooth_value(w)
    for k in _chunks(N):
        U = rng.standard_normal((k, d))
        Uk = rng.standard_normal((k, d))
        idx = rng.integers(problem.n, size=k)
        ref_slopes = (problem._all_values(w + v * U).mean(axis=1) - fw) / v
        ref = h + (ref_slopes - U @ h)[:, None] * U
        vals = problem._pair_values(np.tile(idx, 4), np.concatenate([x + v * Uk, np.broadcast_to(x, Uk.shape), w + v * Uk, np.broadcast_to(w, Uk.shape)]))
        vx1, vx0, vw1, vw0 = np.split(vals, 4)
        diff = (((vx1 - vx0) - (vw1 - vw0)) / v)[:, None] * Uk
        acc.add(diff + ref)
    err = float(np.linalg.norm(acc.mean - problem.full_grad(x)))
    bound = problem.L * v * (d + 3) ** 1.5
    se = acc.stderr
    return MCResult("gk_bias", err <= bound + 3 * se, err, bound, se, N, {"v": v})


# --------------------------------------------------------------------------- Lyapunov trajectories


@dataclass
class LyapunovTrajectory:
    iters: np.ndarray
    psi_mean: np.ndarray
    psi_stderr: np.ndarray


def lyapunov_trajectory(
    problem: CompositeProblem,
    schedule: TheorySchedule,
    x_star: Vector,
    v: float,
    seeds,
    horizon: int,
    record_every: int = 10,
    x0=None,
    h0=None,
) -> LyapunovTrajectory:
    """Seed-averaged Psi_k of ZPDVR run with the theoretical step size and p."""
    _require_gradient(problem)
    seeds = list(seeds)
    if not seeds:
        raise InvalidInputError("need at least one seed")
    if horizon < 1 or record_every < 1:
        raise InvalidInputError("horizon and record_every must be >= 1")
    G_star = problem.component_grads(x_star)
    grid = np.arange(0, horizon + 1, record_every)
    psi = np.zeros((len(seeds), grid.size))
    for s, seed in enumerate(seeds):
        cfg = ZpdvrConfig(eta=schedule.eta, p=schedule.p, v=v, seed=seed)
        opt = Zpdvr(problem, cfg, x0=x0, h0=h0)
        counter = SzoCounter()
        for j, k in enumerate(grid):
            while opt.k < k:
                opt.step(counter)
            st = opt.state
            psi[s, j] = lyapunov(problem, st.x, st.learner.h_tilde, st.w, x_star, schedule, G_star).psi
    se = psi.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros(grid.size)
    return LyapunovTrajectory(grid, psi.mean(axis=0), se)


def lyapunov_trend_check(
    problem: CompositeProblem,
    schedule: TheorySchedule,
    x_star: Vector,
    v: float,
    seeds,
    horizon: int,
    window: int | None = None,
    record_every: int = 10,
    x0=None,
    h0=None,
    slack: float = 1.5,
) -> tuple[MCResult, LyapunovTrajectory]:
    """Check Psi_{k+T} <= slack * c^T * Psi_k on the seed average while Psi_k > 10 delta.

    ``c`` is the schedule's contraction factor and ``T`` the window (default
    a quarter of the horizon, rounded to the recording grid). The statistic
    is the worst observed ratio ``Psi_{k+T} / (c^T Psi_k)``.
    """
    traj = lyapunov_trajectory(problem, schedule, x_star, v, seeds, horizon, record_every, x0, h0)
    if window is None:
        window = max(record_every, (horizon // 4) // record_every * record_every)
    step = max(1, window // record_every)
    factor = schedule.contraction**window
    floor = 10 * schedule.delta_floor
    worst = 0.0
    checked = 0
    for j in range(traj.iters.size - step):
        if traj.psi_mean[j] <= floor:
            continue
        checked += 1
        worst = max(worst, traj.psi_mean[j + step] / (factor * traj.psi_mean[j]))
    result = MCResult(
        "lyapunov_trend",
        worst <= slack,
        worst,
        slack,
        0.0,
        len(list(seeds)),
        {"window": window, "contraction": schedule.contraction, "windows_checked": checked, "floor": floor},
    )
    return result, traj


def smoothing_floor(
    problem: CompositeProblem,
    x_star: Vector,
    v: float,
    seeds,
    horizon: int,
    burn_in: int,
    record_every: int = 10,
) -> float:
    """Time- and seed-averaged Psi of ZPDVR started at the optimum with h = grad f(x*)."""
    sched = theoretical_schedule(problem, v)
    h0 = problem.full_grad(x_star)
    traj = lyapunov_trajectory(problem, sched, x_star, v, seeds, horizon, record_every, x0=x_star, h0=h0)
    return float(traj.psi_mean[traj.iters >= burn_in].mean())


def smoothing_floor_ratio(
    problem: CompositeProblem, x_star: Vector, v: float, seeds, horizon: int, burn_in: int, record_every: int = 10
) -> tuple[float, float, float]:
    """(floor at v, floor at v/2, their ratio) on common seeds; the ratio tracks the v^2 scaling."""
    seeds = list(seeds)
    hi = smoothing_floor(problem, x_star, v, seeds, horizon, burn_in, record_every)
    lo = smoothing_floor(problem, x_star, v / 2, seeds, horizon, burn_in, record_every)
    return hi, lo, hi / lo
