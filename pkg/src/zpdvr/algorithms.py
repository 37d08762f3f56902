"""ZPDVR and the PGD / ZPSVRG / SEGA baselines behind one optimizer contract.

Each optimizer owns its iterate, its RNG stream, and exposes

* ``step(counter)``: one iteration, charging every evaluation to ``counter``;
* ``max_step_cost()``: an upper bound on what the next ``step`` may charge.

:func:`run` drives any optimizer until the next step could exceed the SZO
budget and records a :class:`RunHistory`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, Vector, as_vector, seeded_rng
from .errors import BudgetExhausted, ConfigError, InvalidStepError, ReferenceQualityError
from .estimators import (
    DEFAULT_SMOOTHING,
    SmoothingConfig,
    _difference_estimate,
    _pair_layout_fast,
    coord_fd_gradient,
    dir_estimate_full_multi,
)
from .objective import CompositeProblem, SzoCounter, full_objective, prox_step
from .trackers import GradientLearner, learner_update, reference_gradient

CSV_COLUMNS = ("iter", "szo", "objective", "residual")


# --------------------------------------------------------------------------- ZPDVR


@dataclass(frozen=True)
class ZpdvrConfig:
    eta: float
    p: float | None = None  # None: 1/n
    v: float = DEFAULT_SMOOTHING
    batch_samples: int = 1
    batch_dirs: int = 1
    refresh: str = "bernoulli"  # or "periodic"
    period: int | None = None  # periodic mode; None: ceil(n / batch_samples)
    budget: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidStepError(f"step size must be positive, got {self.eta}")
        if self.p is not None and not 0 < self.p <= 1:
            raise ConfigError(f"refresh probability must lie in (0, 1], got {self.p}")
        if self.refresh not in ("bernoulli", "periodic"):
            raise ConfigError(f"unknown refresh mode {self.refresh!r}")
        if self.period is not None and self.period < 1:
            raise ConfigError("refresh period must be >= 1")
        # validates v and batch sizes
        SmoothingConfig(self.v, self.batch_dirs, self.batch_samples)

    @property
    def smoothing(self) -> SmoothingConfig:
        try:
            return self.__dict__["_smoothing"]
        except KeyError:
            scfg = SmoothingConfig(self.v, self.batch_dirs, self.batch_samples)
            object.__setattr__(self, "_smoothing", scfg)
            return scfg

    def refresh_probability(self, n: int) -> float:
        return 1.0 / n if self.p is None else self.p

    def refresh_period(self, n: int) -> int:
        return self.period if self.period is not None else math.ceil(n / self.batch_samples)


@dataclass(frozen=True)
class OptimizerState:
    x: Vector
    w: Vector
    learner: GradientLearner
    cached_ref_grad: Vector
    k: int
    rng: SeededRng
    needs_refresh: bool = True


def zpdvr_init(problem: CompositeProblem, cfg: ZpdvrConfig, x0=None, h0=None, rng=None) -> OptimizerState:
    d = problem.d
    x0 = np.zeros(d) if x0 is None else as_vector(x0, d).copy()
    h0 = np.zeros(d) if h0 is None else as_vector(h0, d).copy()
    rng = seeded_rng(cfg.seed) if rng is None else rng
    return OptimizerState(
        x=x0,
        w=x0,
        learner=GradientLearner(h0, np.zeros(d)),
        cached_ref_grad=np.zeros(d),
        k=0,
        rng=rng,
        needs_refresh=True,
    )


def zpdvr_step_cost(state: OptimizerState, problem: CompositeProblem, cfg: ZpdvrConfig) -> int:
    """Worst-case SZO charge of the next step (exact in periodic mode)."""
    full = 2 * problem.n * cfg.batch_dirs
    cost = 4 * cfg.batch_samples * cfg.batch_dirs
    if state.needs_refresh:
        cost += full
    if cfg.refresh == "bernoulli" or (state.k + 1) % cfg.refresh_period(problem.n) == 0:
        cost += full
    return cost


def zpdvr_step(state: OptimizerState, problem: CompositeProblem, cfg: ZpdvrConfig, counter: SzoCounter) -> OptimizerState:
    """One loopless iteration: refresh, variance-reduced step, coin flip, learner update."""
    counter.require(zpdvr_step_cost(state, problem, cfg))
    rng = state.rng
    d, bu = problem.d, cfg.batch_dirs
    scfg = cfg.smoothing
    learner, ref = state.learner, state.cached_ref_grad

    if state.needs_refresh:
        u = rng.standard_normal(d) if bu == 1 else rng.standard_normal((bu, d))
        ref = reference_gradient(learner, problem, state.w, u, scfg, counter)
        learner = learner.with_direction(u)

    U_k = rng.standard_normal((bu, d))
    idx = rng.integers(problem.n, size=cfg.batch_samples)
    pairs, U_pairs = _pair_layout_fast(idx, U_k)
    g = _difference_estimate(problem, pairs, state.x, state.w, U_pairs, cfg.v, counter) + ref
    x_new = prox_step(problem, state.x - cfg.eta * g, cfg.eta)

    if cfg.refresh == "periodic":
        fire = (state.k + 1) % cfg.refresh_period(problem.n) == 0
    else:
        fire = rng.random() <= cfg.refresh_probability(problem.n)
    if fire:
        # the reference point takes the pre-update iterate
        w_new = state.x
        learner = learner_update(learner, problem, state.x, scfg, counter)
    else:
        w_new = state.w
    return OptimizerState(x_new, w_new, learner, ref, state.k + 1, rng, needs_refresh=fire)


# --------------------------------------------------------------------------- optimizer contract


class Optimizer:
    name = "optimizer"

    def __init__(self, problem: CompositeProblem, eta: float, seed: int = 0, x0=None):
        if not eta > 0:
            raise InvalidStepError(f"step size must be positive, got {eta}")
        self.problem = problem
        self.eta = float(eta)
        self.rng = seeded_rng(seed)
        self.x = np.zeros(problem.d) if x0 is None else as_vector(x0, problem.d).copy()
        self.k = 0

    def max_step_cost(self) -> int:
        raise NotImplementedError

    def step(self, counter: SzoCounter) -> None:
        raise NotImplementedError


class Zpdvr(Optimizer):
    name = "zpdvr"

    def __init__(self, problem, cfg: ZpdvrConfig, x0=None, h0=None):
        self.problem = problem
        self.cfg = cfg
        self.eta = cfg.eta
        self.state = zpdvr_init(problem, cfg, x0=x0, h0=h0)

    @property
    def x(self):
        return self.state.x

    @property
    def k(self):
        return self.state.k

    def max_step_cost(self):
        return zpdvr_step_cost(self.state, self.problem, self.cfg)

    def step(self, counter):
        self.state = zpdvr_step(self.state, self.problem, self.cfg, counter)


class Pgd(Optimizer):
    """Proximal gradient descent on the coordinate finite-difference gradient."""

    name = "pgd"

    def __init__(self, problem, eta, v=DEFAULT_SMOOTHING, seed=0, x0=None):
        super().__init__(problem, eta, seed, x0)
        self.v = v

    def max_step_cost(self):
        return self.problem.n * (self.problem.d + 1)

    def step(self, counter):
        counter.require(self.max_step_cost())
        grad = coord_fd_gradient(self.problem, self.x, self.v, counter)
        self.x = prox_step(self.problem, self.x - self.eta * grad, self.eta)
        self.k += 1


class Zpsvrg(Optimizer):
    """Double-loop proximal SVRG with a random-direction snapshot gradient.

    Each outer cycle sets the snapshot to the current iterate, spends 2n
    evaluations per snapshot direction, then runs ``m`` inner steps. Every
    inner step counts as one iteration.
    """

    name = "zpsvrg"

    def __init__(self, problem, eta, m, v=DEFAULT_SMOOTHING, batch_samples=1, batch_dirs=1, seed=0, x0=None):
        super().__init__(problem, eta, seed, x0)
        if m < 1:
            raise ConfigError("inner loop length m must be >= 1")
        self.m = int(m)
        self.cfg = SmoothingConfig(v, batch_dirs, batch_samples)
        self.w = self.x
        self.mu_hat = np.zeros(problem.d)
        self.inner_left = 0

    def max_step_cost(self):
        cost = 4 * self.cfg.batch_samples * self.cfg.batch_dirs
        if self.inner_left == 0:
            cost += 2 * self.problem.n * self.cfg.batch_dirs
        return cost

    def step(self, counter):
        counter.require(self.max_step_cost())
        p, d, bu = self.problem, self.problem.d, self.cfg.batch_dirs
        if self.inner_left == 0:
            self.w = self.x
            U = self.rng.standard_normal((bu, d))
            self.mu_hat = dir_estimate_full_multi(p, self.w, U, self.cfg, counter)
            self.inner_left = self.m
        U_k = self.rng.standard_normal((bu, d))
        idx = self.rng.integers(p.n, size=self.cfg.batch_samples)
        pairs, U_pairs = _pair_layout_fast(idx, U_k)
        g = _difference_estimate(p, pairs, self.x, self.w, U_pairs, self.cfg.v, counter) + self.mu_hat
        self.x = prox_step(p, self.x - self.eta * g, self.eta)
        self.inner_left -= 1
        self.k += 1


class Sega(Optimizer):
    """Sketch-and-project gradient learner driven by full directional estimates.

    Per direction u: h <- h + u (s - u^T h) / ||u||^2, where s is the
    finite-difference slope of f along u (2n evaluations); then a prox step
    along the updated h.
    """

    name = "sega"

    def __init__(self, problem, eta, v=DEFAULT_SMOOTHING, batch_dirs=1, seed=0, x0=None, h0=None):
        super().__init__(problem, eta, seed, x0)
        self.cfg = SmoothingConfig(v, batch_dirs, 1)
        self.h = np.zeros(problem.d) if h0 is None else as_vector(h0, problem.d).copy()

    def max_step_cost(self):
        return 2 * self.problem.n * self.cfg.batch_dirs

    def step(self, counter):
        counter.require(self.max_step_cost())
        p = self.problem
        for _ in range(self.cfg.batch_dirs):
            u = self.rng.standard_normal(p.d)
            uu = float(u @ u)
            est = dir_estimate_full_multi(p, self.x, u[None, :], self.cfg, counter)
            slope = float(est @ u) / uu
            self.h = self.h + u * ((slope - float(u @ self.h)) / uu)
        self.x = prox_step(p, self.x - self.eta * self.h, self.eta)
        self.k += 1


ALGORITHMS = ("zpdvr", "zpsvrg", "sega", "pgd")


def make_optimizer(name: str, problem: CompositeProblem, params: dict, seed: int = 0, x0=None) -> Optimizer:
    """Build an optimizer from a flat hyperparameter dict (harness entry point)."""
    params = dict(params)
    v = params.pop("v", DEFAULT_SMOOTHING)
    bs = params.pop("batch_samples", 1)
    bu = params.pop("batch_dirs", 1)
    try:
        eta = params.pop("eta")
    except KeyError:
        raise ConfigError(f"{name}: missing step size 'eta'") from None
    if name == "zpdvr":
        cfg = ZpdvrConfig(
            eta=eta,
            p=params.pop("p", None),
            v=v,
            batch_samples=bs,
            batch_dirs=bu,
            refresh=params.pop("refresh", "bernoulli"),
            period=params.pop("period", None),
            seed=seed,
        )
        opt = Zpdvr(problem, cfg, x0=x0)
    elif name == "zpsvrg":
        opt = Zpsvrg(problem, eta, params.pop("m", 100), v=v, batch_samples=bs, batch_dirs=bu, seed=seed, x0=x0)
    elif name == "sega":
        opt = Sega(problem, eta, v=v, batch_dirs=bu, seed=seed, x0=x0)
    elif name == "pgd":
        opt = Pgd(problem, eta, v=v, seed=seed, x0=x0)
    else:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
    if params:
        raise ConfigError(f"{name}: unknown hyperparameters {sorted(params)}")
    return opt


# --------------------------------------------------------------------------- driver and history


@dataclass
class RunHistory:
    iters: list[int] = field(default_factory=list)
    szo: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    final_x: Vector | None = None

    def append(self, k: int, szo: int, obj: float, res: float) -> None:
        if self.szo and szo <= self.szo[-1]:
            return
        self.iters.append(int(k))
        self.szo.append(int(szo))
        self.objective.append(float(obj))
        self.residual.append(float(res))

    def __len__(self):
        return len(self.szo)

    def residual_at(self, szo: int) -> float:
        """Residual of the last sample taken with at most ``szo`` evaluations."""
        pos = np.searchsorted(self.szo, szo, side="right") - 1
        if pos < 0:
            raise ValueError(f"no sample at or below {szo} evaluations")
        return self.residual[pos]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(self.iters, self.szo, self.objective, self.residual):
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "RunHistory":
        hist = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                hist.append(int(row["iter"]), int(row["szo"]), float(row["objective"]), float(row["residual"]))
        return hist


def run(
    optimizer: Optimizer,
    budget: int,
    reference_optimum: float | None = None,
    sample_every: int = 1,
    counter: SzoCounter | None = None,
    stop_residual: float | None = None,
    residual_floor: float = -math.inf,
    stop_above: float | None = None,
) -> RunHistory:
    """Step ``optimizer`` until the next step could exceed ``budget`` evaluations.

    Samples (iteration, SZO, F, F - F*) at the start, every ``sample_every``
    iterations, and at the end. Objective evaluations for reporting are not
    charged. ``stop_residual`` ends the run early at the first sample at or
    below it, ``stop_above`` at the first sample above it or with a
    non-finite objective (divergence). A residual below ``residual_floor``
    raises :class:`ReferenceQualityError`.
    """
    if sample_every < 1:
        raise ConfigError("sample_every must be >= 1")
    problem = optimizer.problem
    counter = SzoCounter(budget) if counter is None else counter
    counter.budget = budget
    hist = RunHistory()

    def record():
        x = optimizer.x
        obj = full_objective(problem, x) if np.all(np.isfinite(x)) else math.inf
        res = obj - reference_optimum if reference_optimum is not None else math.nan
        if res < residual_floor:
            raise ReferenceQualityError(
                f"residual {res:.3e} below {residual_floor:.3e}: reference optimum is not accurate enough"
            )
        hist.append(optimizer.k, counter.count, obj, res)
        return res

    def finished(res):
        if stop_residual is not None and res <= stop_residual:
            return True
        if not math.isfinite(hist.objective[-1]):
            return True
        return stop_above is not None and res > stop_above

    done = finished(record())
    while not done:
        if counter.count + optimizer.max_step_cost() > budget:
            break
        try:
            optimizer.step(counter)
        except BudgetExhausted:
            break
        if optimizer.k % sample_every == 0:
            done = finished(record())
    if not hist.iters or hist.iters[-1] != optimizer.k:
        record()
    hist.final_x = np.array(optimizer.x, copy=True)
    return hist


def zpdvr_run(problem, cfg: ZpdvrConfig, reference_optimum=None, sample_every=1, counter=None, x0=None, **kw) -> RunHistory:
    if cfg.budget is None:
        raise ConfigError("ZpdvrConfig.budget must be set for a run")
    return run(Zpdvr(problem, cfg, x0=x0), cfg.budget, reference_optimum, sample_every, counter, **kw)


def pgd_run(problem, eta, v, budget, counter=None, reference_optimum=None, sample_every=1, x0=None, **kw) -> RunHistory:
    return run(Pgd(problem, eta, v=v, x0=x0), budget, reference_optimum, sample_every, counter, **kw)


def zpsvrg_run(
    problem, eta, v, inner_loop_m, budget, counter=None, reference_optimum=None, sample_every=1, seed=0, x0=None,
    batch_samples=1, batch_dirs=1, **kw,
) -> RunHistory:
    opt = Zpsvrg(problem, eta, inner_loop_m, v=v, batch_samples=batch_samples, batch_dirs=batch_dirs, seed=seed, x0=x0)
    return run(opt, budget, reference_optimum, sample_every, counter, **kw)


def sega_run(problem, eta, v, budget, counter=None, reference_optimum=None, sample_every=1, seed=0, x0=None, batch_dirs=1, **kw) -> RunHistory:
    opt = Sega(problem, eta, v=v, batch_dirs=batch_dirs, seed=seed, x0=x0)
    return run(opt, budget, reference_optimum, sample_every, counter, **kw)
