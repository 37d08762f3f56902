"""Experiment driver: YAML configs, comparison runs, grid search, validators, reports.

A config file looks like::

    problem:
      kind: quadratic          # quadratic | libsvm | synthetic_logistic
      n: 100
      d: 20
      kappa: 20
      lambda1: 0.1
    v: 1.0e-5
    budget: 500                # in units of n*d unless budget_unit: szo
    seeds: [0, 1]
    sample_every: 100
    out_dir: runs/quadratic
    algorithms:
      zpdvr: {eta: 3.0e-5}
      zpsvrg: {eta: 3.0e-5, m: 100}
    grid:                      # gridsearch only; lists are searched as a product
      zpdvr: {eta: [1.0e-5, 3.0e-5]}

Each (algorithm, seed) cell writes ``<alg>_seed<seed>.csv``; every
invocation writes one ``summary.json``.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .algorithms import ALGORITHMS, RunHistory, make_optimizer, run
from .core import seeded_rng
from .data import logistic_problem, make_quadratic_lasso, make_synthetic_classification, parse_libsvm
from .errors import ConfigError, ZpdvrError
from .objective import CompositeProblem
from .reference import compute_reference_optimum
from .theory import (
    MCResult,
    lyapunov_trend_check,
    mc_estimator_bias_check,
    mc_gk_bias_check,
    mc_moment_check,
    mc_projection_identity,
    mc_second_moment_check,
    smoothing_floor_ratio,
    theoretical_schedule,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "build_problem",
    "compute_reference_optimum",
    "run_experiment",
    "grid_search",
    "validate",
    "summarize",
    "SUITES",
]

DATA_ENV = "ZPDVR_DATA_DIR"
PROBLEM_KINDS = ("quadratic", "libsvm", "synthetic_logistic")
CHECKPOINTS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: dict
    budget: float
    budget_unit: str = "nd"
    v: float = 1e-3
    seeds: list = field(default_factory=lambda: [0])
    sample_every: int = 1
    out_dir: str = "runs"
    reference_tol: float = 1e-10
    grid: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if self.budget_unit not in ("nd", "szo"):
            raise ConfigError(f"budget_unit must be 'nd' or 'szo', got {self.budget_unit!r}")
        if not isinstance(self.budget, (int, float)) or not self.budget >= 0:
            raise ConfigError(f"budget must be a nonnegative number, got {self.budget!r}")
        if not self.algorithms and not self.grid:
            raise ConfigError("at least one algorithm is required")
        for name in list(self.algorithms) + list(self.grid):
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        if not self.reference_tol > 0:
            raise ConfigError("reference_tol must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        kind = self.problem.get("kind")
        if kind not in PROBLEM_KINDS:
            raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}, got {kind!r}")
        if kind == "libsvm":
            path = resolve_data_path(self.problem.get("path", ""))
            if not path.is_file():
                raise ConfigError(f"dataset file not found: {self.problem.get('path')!r} (set {DATA_ENV} to its directory)")

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "algorithms": self.algorithms,
            "budget": self.budget,
            "budget_unit": self.budget_unit,
            "v": self.v,
            "seeds": list(self.seeds),
            "sample_every": self.sample_every,
            "out_dir": self.out_dir,
            "reference_tol": self.reference_tol,
            "grid": self.grid,
            "jobs": self.jobs,
        }

    def budget_szo(self, problem: CompositeProblem) -> int:
        if self.budget_unit == "szo":
            return int(self.budget)
        return int(round(self.budget * problem.n * problem.d))


def resolve_data_path(path) -> Path:
    """``path`` as given if it exists, else relative to ``$ZPDVR_DATA_DIR``."""
    p = Path(os.path.expanduser(str(path)))
    if p.is_file() or p.is_absolute():
        return p
    base = os.environ.get(DATA_ENV)
    return Path(base) / p if base else p


def bundled_config_path(name: str) -> Path | None:
    ref = resources.files("zpdvr") / "configs" / f"{name}.yaml"
    return Path(str(ref)) if ref.is_file() else None


def load_config(source, overrides: dict | None = None) -> ExperimentConfig:
    """Load a YAML config from a path or a bundled config name, then apply ``overrides``.

    Overrides with value ``None`` are ignored; ``seed`` replaces the seed list.
    """
    path = Path(str(source))
    bundled = bundled_config_path(str(source)) if not path.suffix else None
    if bundled is not None:
        # a bare name means a bundled config even if a dataset file shares it
        path = bundled
    elif not path.is_file():
        raise ConfigError(f"config not found: {source}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, overrides)


def config_from_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            raw["seeds"] = [int(value)]
        else:
            raw[key] = value
    if "seeds" in raw and not isinstance(raw["seeds"], list):
        raw["seeds"] = [raw["seeds"]]
    raw.setdefault("algorithms", {})
    if raw["algorithms"] is None:
        raw["algorithms"] = {}
    allowed = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("problem", "budget"):
        if key not in raw:
            raise ConfigError(f"missing config key {key!r}")
    return ExperimentConfig(**raw)


def build_problem(cfg: ExperimentConfig) -> CompositeProblem:
    pspec = dict(cfg.problem)
    kind = pspec.pop("kind")
    try:
        if kind == "quadratic":
            return make_quadratic_lasso(
                int(pspec["n"]), int(pspec["d"]), float(pspec.get("kappa", 1.0)), float(pspec.get("lambda1", 0.0)),
                seed=int(pspec.get("seed", 0)), mu=float(pspec.get("mu", 1.0)),
            )
        if kind == "synthetic_logistic":
            ds = make_synthetic_classification(
                int(pspec["n"]), int(pspec["d"]), float(pspec.get("density", 0.1)), seed=int(pspec.get("seed", 0)),
                binary=bool(pspec.get("binary", True)),
            )
        else:
            ds = parse_libsvm(resolve_data_path(pspec["path"]), d=pspec.get("d"))
    except KeyError as exc:
        raise ConfigError(f"problem section is missing {exc}") from None
    return logistic_problem(ds, float(pspec.get("lambda1", 0.0)), float(pspec.get("lambda2", 0.0)), scale=bool(pspec.get("scale", False)))


# --------------------------------------------------------------------------- hashing and reports


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(_canonical(cfg.to_dict()).encode()).hexdigest()


def code_hash() -> str:
    h = hashlib.sha256()
    root = Path(__file__).parent
    for f in sorted(root.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


@dataclass
class ExperimentReport:
    out_dir: Path
    summary: dict
    histories: dict = field(default_factory=dict)  # (alg, seed) -> RunHistory

    @property
    def summary_path(self) -> Path:
        return self.out_dir / "summary.json"


def _json_float(x: float):
    return x if math.isfinite(x) else repr(x)


def _checkpoint_residuals(hist: RunHistory, budget: int) -> dict:
    out = {}
    for frac in CHECKPOINTS:
        szo = int(frac * budget)
        try:
            out[str(szo)] = _json_float(hist.residual_at(szo))
        except ValueError:
            continue
    return out


# --------------------------------------------------------------------------- cell execution


@dataclass
class _Cell:
    alg: str
    seed: int
    params: dict
    budget: int


def _run_cell(problem: CompositeProblem, cell: _Cell, f_star: float, sample_every: int, floor: float):
    """Run one (algorithm, params, seed); returns (history or None, error string or None, seconds)."""
    t0 = time.perf_counter()
    try:
        opt = make_optimizer(cell.alg, problem, cell.params, seed=cell.seed)
        hist = run(opt, cell.budget, reference_optimum=f_star, sample_every=sample_every, residual_floor=floor)
        return hist, None, time.perf_counter() - t0
    except (ZpdvrError, ValueError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


_WORKER: dict = {}


def _init_worker(problem, f_star, sample_every, floor):
    _WORKER.update(problem=problem, f_star=f_star, sample_every=sample_every, floor=floor)


def _run_cell_in_worker(cell: _Cell):
    return _run_cell(_WORKER["problem"], cell, _WORKER["f_star"], _WORKER["sample_every"], _WORKER["floor"])


def _execute(problem, cells, f_star, cfg: ExperimentConfig):
    floor = -10 * cfg.reference_tol
    if cfg.jobs == 1 or len(cells) <= 1:
        return [_run_cell(problem, c, f_star, cfg.sample_every, floor) for c in cells]
    with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(problem, f_star, cfg.sample_every, floor)) as pool:
        return list(pool.map(_run_cell_in_worker, cells))


def _cell_params(cfg: ExperimentConfig, params: dict) -> dict:
    out = dict(params)
    out.setdefault("v", cfg.v)
    return out


def _prepare(cfg: ExperimentConfig):
    problem = build_problem(cfg)
    _, f_star = compute_reference_optimum(problem, tol=cfg.reference_tol)
    return problem, f_star


def _write_cells(out_dir: Path, cells, results, budget: int):
    records, histories = [], {}
    for cell, (hist, err, secs) in zip(cells, results):
        rec = {"algorithm": cell.alg, "seed": cell.seed, "params": cell.params, "wall_time": secs}
        if hist is None:
            rec["error"] = err
        else:
            name = f"{cell.alg}_seed{cell.seed}.csv"
            hist.to_csv(out_dir / name)
            histories[(cell.alg, cell.seed)] = hist
            rec.update(
                csv=name,
                final_szo=hist.szo[-1],
                final_residual=_json_float(hist.residual[-1]),
                checkpoints=_checkpoint_residuals(hist, budget),
            )
        records.append(rec)
    return records, histories


def _best_by_algorithm(records) -> dict:
    best = {}
    for rec in records:
        if "error" in rec:
            continue
        res = rec["final_residual"]
        res = float(res) if isinstance(res, str) else res
        cur = best.get(rec["algorithm"])
        if cur is None or res < cur["final_residual"]:
            best[rec["algorithm"]] = {"final_residual": res, "seed": rec["seed"], "params": rec["params"], "checkpoints": rec["checkpoints"]}
    return {k: {**v, "final_residual": _json_float(v["final_residual"])} for k, v in best.items()}


def _write_summary(out_dir: Path, summary: dict) -> None:
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, algorithms=None) -> ExperimentReport:
    """Run every configured (algorithm, seed) cell; failed cells are recorded, not raised."""
    t0 = time.perf_counter()
    names = list(cfg.algorithms) if algorithms is None else list(algorithms)
    missing = [a for a in names if a not in cfg.algorithms]
    if missing:
        raise ConfigError(f"algorithms not configured: {missing}")
    if not names:
        raise ConfigError("no algorithms to run")
    problem, f_star = _prepare(cfg)
    budget = cfg.budget_szo(problem)
    cells = [_Cell(a, int(s), _cell_params(cfg, cfg.algorithms[a] or {}), budget) for a in names for s in cfg.seeds]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, histories = _write_cells(out_dir, cells, _execute(problem, cells, f_star, cfg), budget)
    summary = {
        "mode": "run",
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "code_hash": code_hash(),
        "problem": {"n": problem.n, "d": problem.d, "L": problem.L, "mu": problem.mu, "f_star": f_star},
        "budget_szo": budget,
        "cells": records,
        "best": _best_by_algorithm(records),
        "wall_time": time.perf_counter() - t0,
    }
    _write_summary(out_dir, summary)
    return ExperimentReport(out_dir, summary, histories)


def grid_points(grid: dict) -> list[dict]:
    """Cartesian product of list-valued entries, in config order; scalars are fixed."""
    keys = list(grid)
    values = []
    for k in keys:
        val = grid[k]
        vals = list(val) if isinstance(val, (list, tuple)) else [val]
        if not vals:
            raise ConfigError(f"grid entry {k!r} is empty")
        values.append(vals)
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _score(results) -> float:
    finals = []
    for hist, err, _ in results:
        if hist is None or not math.isfinite(hist.residual[-1]):
            return math.inf
        finals.append(hist.residual[-1])
    return float(np.mean(finals))


def grid_search(cfg: ExperimentConfig, algorithms=None) -> ExperimentReport:
    """Evaluate every grid point at the shared budget and keep the best per algorithm.

    A candidate's score is its final residual averaged over seeds (infinite
    if any seed fails or diverges). The leaderboard is sorted ascending with
    ties kept in grid order; the winner's runs are written as CSVs.
    """
    t0 = time.perf_counter()
    grids = cfg.grid or {a: {k: [v] for k, v in (p or {}).items()} for a, p in cfg.algorithms.items()}
    names = list(grids) if algorithms is None else list(algorithms)
    if not names:
        raise ConfigError("empty grid")
    problem, f_star = _prepare(cfg)
    budget = cfg.budget_szo(problem)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    candidates, cells = [], []
    for alg in names:
        if alg not in grids:
            raise ConfigError(f"no grid for algorithm {alg!r}")
        points = grid_points(grids[alg] or {})
        if not points:
            raise ConfigError(f"empty grid for {alg!r}")
        for pos, params in enumerate(points):
            full = _cell_params(cfg, params)
            candidates.append((alg, pos, full, len(cells)))
            cells.extend(_Cell(alg, int(s), full, budget) for s in cfg.seeds)
    results = _execute(problem, cells, f_star, cfg)
    n_seeds = len(cfg.seeds)

    leaderboard, winners_cells, winners_results = {}, [], []
    for alg in names:
        entries = []
        for a, pos, params, start in candidates:
            if a != alg:
                continue
            res = results[start:start + n_seeds]
            errors = [e for _, e, _ in res if e]
            entries.append((_score(res), pos, params, start, errors))
        entries.sort(key=lambda e: (e[0], e[1]))
        leaderboard[alg] = [
            {"rank": r, "params": p, "score": _json_float(s), **({"errors": errs} if errs else {})}
            for r, (s, _, p, _, errs) in enumerate(entries)
        ]
        start = entries[0][3]
        winners_cells.extend(cells[start:start + n_seeds])
        winners_results.extend(results[start:start + n_seeds])

    records, histories = _write_cells(out_dir, winners_cells, winners_results, budget)
    summary = {
        "mode": "gridsearch",
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "code_hash": code_hash(),
        "problem": {"n": problem.n, "d": problem.d, "L": problem.L, "mu": problem.mu, "f_star": f_star},
        "budget_szo": budget,
        "cells": records,
        "best": _best_by_algorithm(records),
        "winners": {alg: board[0]["params"] for alg, board in leaderboard.items()},
        "leaderboard": leaderboard,
        "wall_time": time.perf_counter() - t0,
    }
    _write_summary(out_dir, summary)
    return ExperimentReport(out_dir, summary, histories)


# --------------------------------------------------------------------------- validators


def _suite_moments(quick):
    N = 100_000 if quick else 1_000_000
    return [mc_moment_check(d, q, N, rng=seeded_rng(1000 * q + d)) for q in (1, 2, 4, 6) for d in (2, 5, 20)]


def _suite_projection(quick):
    N = 100_000 if quick else 1_000_000
    out = []
    for d in (1, 3, 20):
        vec = np.zeros(d)
        vec[0] = 1.0
        out.append(mc_projection_identity(d, vec, N, rng=seeded_rng(d, stream=1)))
    return out


def _validation_logistic():
    ds = make_synthetic_classification(50, 10, density=0.5, seed=0, binary=False)
    return logistic_problem(ds, 0.0, 1e-2)


def _suite_estimator(quick):
    N = 100_000 if quick else 200_000
    prob = _validation_logistic()
    rng = seeded_rng(11, stream=2)
    out = []
    for j in range(5):
        x = rng.standard_normal(prob.d)
        i = int(rng.integers(prob.n))
        out.append(mc_estimator_bias_check(prob, x, 1e-3, N, rng=seeded_rng(j, stream=3), component=i))
    out.append(mc_estimator_bias_check(prob, x, 1e-3, N, rng=seeded_rng(5, stream=3)))
    out.append(mc_second_moment_check(prob, x, 1e-3, N, rng=seeded_rng(6, stream=3)))
    return out


def _suite_gk(quick):
    N = 100_000 if quick else 200_000
    prob = _validation_logistic()
    rng = seeded_rng(12, stream=2)
    out = []
    for j in range(5):
        x, w, h = (rng.standard_normal(prob.d) for _ in range(3))
        out.append(mc_gk_bias_check(prob, x, w, h, 1e-3, N, rng=seeded_rng(j, stream=4)))
    return out


def _small_quadratic():
    prob = make_quadratic_lasso(20, 5, 5, 0.1, seed=0)
    x_star, _ = compute_reference_optimum(prob)
    return prob, x_star


def _suite_lyapunov(quick):
    prob, x_star = _small_quadratic()
    v = 1e-4
    sched = theoretical_schedule(prob, v)
    seeds = range(50 if quick else 200)
    res, _ = lyapunov_trend_check(prob, sched, x_star, v, seeds, horizon=2000, record_every=50)
    return [res]


def _suite_floor(quick):
    prob, x_star = _small_quadratic()
    seeds = range(10 if quick else 20)
    hi, lo, ratio = smoothing_floor_ratio(prob, x_star, 1e-2, seeds, horizon=3000, burn_in=1000)
    return [MCResult("smoothing_floor", 3.0 <= ratio <= 5.0, ratio, 4.0, 0.0, len(seeds), {"floor_v": hi, "floor_half_v": lo})]


SUITES = {
    "moments": _suite_moments,
    "projection": _suite_projection,
    "estimator": _suite_estimator,
    "gk": _suite_gk,
    "lyapunov": _suite_lyapunov,
    "floor": _suite_floor,
}


def validate(suite: str = "all", quick: bool = False) -> list[MCResult]:
    """Run one validator suite (or ``all``) with fixed seeds."""
    if suite == "all":
        return [r for name in SUITES for r in SUITES[name](quick)]
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)} or 'all'")
    return SUITES[suite](quick)


# --------------------------------------------------------------------------- summaries


def summarize(out_dir) -> str:
    """Plain-text table of a run directory's summary.json."""
    path = Path(out_dir) / "summary.json"
    if not path.is_file():
        raise ConfigError(f"no summary.json in {out_dir}")
    summary = json.loads(path.read_text(encoding="utf-8"))
    lines = [f"mode: {summary['mode']}  budget: {summary['budget_szo']} SZO  f*: {summary['problem']['f_star']!r}"]
    lines.append(f"{'algorithm':<10} {'seed':>5} {'final_szo':>12} {'final_residual':>16}  params")
    for rec in summary["cells"]:
        if "error" in rec:
            lines.append(f"{rec['algorithm']:<10} {rec['seed']:>5} {'-':>12} {'error':>16}  {rec['error']}")
            continue
        res = rec["final_residual"]
        res_s = f"{res:.6e}" if isinstance(res, float) else str(res)
        lines.append(f"{rec['algorithm']:<10} {rec['seed']:>5} {rec['final_szo']:>12} {res_s:>16}  {_canonical(rec['params'])}")
    return "\n".join(lines)
