"""Seeded benchmark trials and success-rate / SP1 aggregation.

A trial starts from a mean drawn uniformly from the objective's init box,
``sigma = (b - a) / 2`` and ``C = I``, and stops when

* the best value so far drops below ``target_f`` (success),
* the evaluation count reaches ``max_evals``,
* the smallest eigenvalue of ``sigma^2 C`` falls below ``min_eig_threshold``,
* or the covariance loses positive definiteness.

All ``lam`` candidates of a generation are evaluated and counted before the
target is checked, so evaluation counts are multiples of ``lam``.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .cma import SearchDistribution, Variant, ask, default_strategy_params, resolve_r, tell
from .exceptions import CovarianceCollapse, InvalidConfig
from .objectives import Objective, evaluate

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

CSV_COLUMNS = (
    "function", "dim", "variant", "r", "lambda", "trials",
    "sr", "sp1", "mean_success_evals", "seed",
)
UNDEFINED = "-"


def splitmix64(x):
    """SplitMix64 output function applied to the 64-bit integer ``x``."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(base_seed, i):
    """Seed of trial ``i``: the ``(i + 1)``-th SplitMix64 draw from ``base_seed``."""
    return splitmix64((base_seed + (i + 1) * GOLDEN_GAMMA) & MASK64)


class Termination(str, Enum):
    TARGET_REACHED = "TargetReached"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    EIGENVALUE_COLLAPSE = "EigenvalueCollapse"
    COVARIANCE_COLLAPSE = "CovarianceCollapse"


@dataclass(frozen=True)
class TrialConfig:
    objective: Objective
    variant: Variant = Variant.CMA_ES
    r: Optional[str] = None
    lam: Optional[int] = None
    target_f: float = 1e-10
    max_evals: Optional[int] = None
    min_eig_threshold: float = 1e-30
    seed: int = 0
    use_h_sigma: bool = False
    trace: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is not Variant.MAP_CMA:
            object.__setattr__(self, "r", None)
        if self.max_evals is None:
            object.__setattr__(self, "max_evals", 10**6 * self.objective.dim)
        if not self.target_f > 0:
            raise InvalidConfig("target_f must be positive")
        # also validates lam and r
        params = self.strategy_params()
        if self.max_evals < params.lam:
            raise InvalidConfig(f"max_evals={self.max_evals} is below lambda={params.lam}")

    def strategy_params(self):
        return default_strategy_params(
            self.objective.dim, lam=self.lam, variant=self.variant, r=self.r,
            use_h_sigma=self.use_h_sigma,
        )

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True)
class TrialResult:
    success: bool
    evaluations: int
    best_f: float
    termination_reason: Termination
    seed: int = 0
    trace: Optional[List[Tuple[int, float]]] = None


def _trace_stride(n):
    return 1 if n <= 20 else 5


def run_trial(cfg):
    """Run one optimization trial; failures are reported, never raised."""
    obj = cfg.objective
    params = cfg.strategy_params()
    rng = np.random.default_rng(cfg.seed)
    a, b = obj.init_box
    state = SearchDistribution.initial(rng.uniform(a, b, size=obj.dim), (b - a) / 2)

    evaluations = 0
    best_f = math.inf
    trace = [] if cfg.trace else None
    stride = _trace_stride(obj.dim)
    generation = 0

    def result(reason):
        if trace is not None and (not trace or trace[-1][0] != evaluations):
            trace.append((evaluations, best_f))
        return TrialResult(
            reason is Termination.TARGET_REACHED, evaluations, best_f, reason, cfg.seed, trace
        )

    while True:
        try:
            pop = ask(state, params, rng)
        except CovarianceCollapse:
            return result(Termination.COVARIANCE_COLLAPSE)
        f = evaluate(obj, pop.x)
        evaluations += params.lam
        best_f = min(best_f, float(np.min(f)))
        if trace is not None and generation % stride == 0:
            trace.append((evaluations, best_f))
        generation += 1
        if best_f < cfg.target_f:
            return result(Termination.TARGET_REACHED)
        try:
            state = tell(state, params, pop.evaluated(f))
        except CovarianceCollapse:
            return result(Termination.COVARIANCE_COLLAPSE)
        if state.min_eigenvalue() < cfg.min_eig_threshold:
            return result(Termination.EIGENVALUE_COLLAPSE)
        if evaluations >= cfg.max_evals:
            return result(Termination.BUDGET_EXHAUSTED)


def sp1(results):
    """Mean evaluations of successful trials divided by the success rate.

    Returns ``None`` when no trial succeeded.
    """
    results = list(results)
    if not results:
        raise ValueError("sp1 of an empty result list")
    wins = [r.evaluations for r in results if r.success]
    if not wins:
        return None
    return (sum(wins) / len(wins)) / (len(wins) / len(results))


@dataclass(frozen=True)
class ExperimentSummary:
    config: TrialConfig
    base_seed: int
    results: List[TrialResult] = field(repr=False)

    @property
    def n_trials(self):
        return len(self.results)

    @property
    def success_rate(self):
        return sum(r.success for r in self.results) / len(self.results)

    @property
    def mean_success_evals(self):
        wins = [r.evaluations for r in self.results if r.success]
        return sum(wins) / len(wins) if wins else None

    @property
    def sp1(self):
        return sp1(self.results)

    def row(self):
        """CSV row in :data:`CSV_COLUMNS` order."""
        cfg = self.config
        return {
            "function": cfg.objective.name,
            "dim": cfg.objective.dim,
            "variant": cfg.variant.value,
            "r": UNDEFINED if cfg.r is None else str(cfg.r),
            "lambda": cfg.strategy_params().lam,
            "trials": self.n_trials,
            "sr": f"{self.success_rate:.2f}",
            "sp1": _fmt(self.sp1),
            "mean_success_evals": _fmt(self.mean_success_evals),
            "seed": self.base_seed,
        }


def _fmt(value):
    return UNDEFINED if value is None else f"{value:.1f}"


def default_parallelism():
    env = os.environ.get("MAPCMA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidConfig(f"MAPCMA_THREADS must be an integer, got {env!r}") from None
    return 1


def run_experiment(cfg, n_trials, base_seed=0, parallelism=None):
    """Run ``n_trials`` independent trials of ``cfg``.

    Trial ``i`` uses ``trial_seed(base_seed, i)``. Results are stored in trial
    order, so the summary does not depend on ``parallelism``; when it is
    ``None`` the ``MAPCMA_THREADS`` environment variable decides (default 1).
    """
    if n_trials < 1:
        raise InvalidConfig("n_trials must be at least 1")
    configs = [cfg.with_seed(trial_seed(base_seed, i)) for i in range(n_trials)]
    workers = default_parallelism() if parallelism is None else max(1, int(parallelism))
    if workers == 1 or n_trials == 1:
        results = [run_trial(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n_trials)) as pool:
            results = list(pool.map(run_trial, configs))
    return ExperimentSummary(cfg, base_seed, results)


def _format_row(row):
    out = dict(row)
    out["r"] = UNDEFINED if row["r"] is None else row["r"]
    if not isinstance(row["sr"], str):
        out["sr"] = f"{row['sr']:.2f}"
    for key in ("sp1", "mean_success_evals"):
        if not isinstance(row[key], str):
            out[key] = _fmt(row[key])
    return out


def rows_to_csv(rows, fh=None):
    """Write rows in :data:`CSV_COLUMNS` order; inverse of :func:`read_summary_csv`.

    Returns the text if ``fh`` is None.
    """
    out = io.StringIO() if fh is None else fh
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_format_row(row))
    return out.getvalue() if fh is None else None


def summaries_to_csv(summaries, fh=None):
    """Write summary rows as CSV to ``fh``; returns the text if ``fh`` is None."""
    return rows_to_csv([s.row() for s in summaries], fh)


def read_summary_csv(fh):
    """Parse rows written by :func:`summaries_to_csv`; ``"-"`` becomes ``None``."""
    rows = []
    for raw in csv.DictReader(fh):
        row = dict(raw)
        for key in ("dim", "lambda", "trials", "seed"):
            row[key] = int(row[key])
        row["sr"] = float(row["sr"])
        row["r"] = None if row["r"] == UNDEFINED else row["r"]
        for key in ("sp1", "mean_success_evals"):
            row[key] = None if row[key] == UNDEFINED else float(row[key])
        rows.append(row)
    return rows


def traces_to_json(summary):
    """Per-trial convergence traces as a JSON-serializable dict."""
    return {
        "function": summary.config.objective.name,
        "dim": summary.config.objective.dim,
        "variant": summary.config.variant.value,
        "r": summary.config.r,
        "trials": [
            {
                "seed": res.seed,
                "success": res.success,
                "evaluations": res.evaluations,
                "termination": res.termination_reason.value,
                "trace": [[e, f] for e, f in (res.trace or [])],
            }
            for res in summary.results
        ],
    }


def write_traces(summary, path):
    with open(path, "w") as fh:
        json.dump(traces_to_json(summary), fh)
