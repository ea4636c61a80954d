"""Gradient-norm trajectories of SUM runs checked against the convergence bounds."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BoundInputs, SUMConfig, SUMState, bound, schedule_alpha, step_unified
from .parallel import map_ordered
from .problems import IndexStream, StochasticProblem
from .seeding import derive_seed
from .stability import DIVERGENCE_FACTOR, DivergenceError


class ScheduleMismatch(ValueError):
    """The trace was not produced with the step size the bound assumes."""


def default_record_every(steps: int) -> int:
    return max(1, steps // 500)


@dataclass
class RunTrace:
    config: SUMConfig
    seed: int
    steps: int
    k: np.ndarray
    f: np.ndarray
    grad_sq: np.ndarray
    min_grad_sq: np.ndarray
    train_err: Optional[np.ndarray] = None
    test_err: Optional[np.ndarray] = None
    wall_per_step: float = 0.0
    x_last: Optional[np.ndarray] = field(default=None, repr=False)
    x_argmin: Optional[np.ndarray] = field(default=None, repr=False)
    divergence_factor: float = DIVERGENCE_FACTOR

    @property
    def final_min(self) -> float:
        return float(self.min_grad_sq[-1])

    @property
    def argmin_k(self) -> int:
        # smallest k on ties
        return int(self.k[int(np.argmin(self.grad_sq))])

    def rows(self):
        n = len(self.k)
        tr = self.train_err if self.train_err is not None else [None] * n
        te = self.test_err if self.test_err is not None else [None] * n
        for i in range(n):
            yield (int(self.k[i]), float(self.f[i]), float(self.grad_sq[i]), float(self.min_grad_sq[i]),
                   tr[i], te[i])


def run(problem: StochasticProblem, cfg: SUMConfig, steps: int, seed: int,
        record_every: Optional[int] = None, x0=None, test_set=None,
        lr_drop: Optional[tuple] = None) -> RunTrace:
    """SUM with uniform single-index sampling, recording ``||grad f||^2``.

    The full gradient is evaluated at ``k = 0``, every ``record_every`` steps
    and at ``k = steps``.  ``lr_drop=(step, factor)`` divides the step size
    once at the given step.  Raises :class:`DivergenceError` when ``f`` exceeds
    ``1e6 * f(x_0)`` at a recorded point.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    record_every = record_every or default_record_every(steps)
    x0 = problem.initial_point(seed) if x0 is None else np.asarray(x0, dtype=np.float64)
    state = SUMState.initial(x0)
    stream = IndexStream(problem.n, derive_seed(seed, "run-index"))
    classify = problem.error(x0) is not None

    ks, fs, gs, tr, te = [], [], [], [], []
    best = math.inf
    x_argmin = state.x

    def record(k, x):
        nonlocal best, x_argmin
        f = problem.loss(x)
        g = problem.full_grad(x)
        gsq = float(g @ g)
        ks.append(k)
        fs.append(f)
        gs.append(gsq)
        if gsq < best:
            best, x_argmin = gsq, x
        if classify:
            tr.append(problem.error(x))
            te.append(problem.error(x, *test_set) if test_set is not None else None)
        return f

    f0 = record(0, state.x)
    limit = DIVERGENCE_FACTOR * max(f0, 1e-300)
    active = cfg
    t0 = time.perf_counter()
    for k in range(steps):
        if lr_drop is not None and k == lr_drop[0]:
            active = cfg.with_alpha(cfg.alpha / lr_drop[1])
        i = stream.next()
        state = step_unified(state, problem.example_grad(state.x, i), active)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            f = record(k + 1, state.x)
            if not math.isfinite(f) or f > limit:
                raise DivergenceError(
                    f"f(x_{k + 1}) = {f:.6g} exceeds {DIVERGENCE_FACTOR:g} x f(x_0) = {f0:.6g}"
                )
    wall = (time.perf_counter() - t0) / steps

    gs_arr = np.array(gs)
    return RunTrace(
        config=cfg, seed=seed, steps=steps, k=np.array(ks), f=np.array(fs), grad_sq=gs_arr,
        min_grad_sq=np.minimum.accumulate(gs_arr),
        train_err=np.array(tr) if classify else None,
        test_err=np.array(te, dtype=object if test_set is None else float) if classify else None,
        wall_per_step=wall, x_last=state.x, x_argmin=x_argmin,
    )


def _replica(args):
    problem, cfg, steps, seed, record_every, x0, test_set, lr_drop = args
    return run(problem, cfg, steps, seed, record_every, x0=x0, test_set=test_set, lr_drop=lr_drop)


def replica_seed(seed: int, replica: int) -> int:
    return derive_seed(seed, "replica", replica)


def run_replicas(problem: StochasticProblem, cfg: SUMConfig, steps: int, seed: int, replicas: int,
                 record_every: Optional[int] = None, x0=None, test_set=None,
                 lr_drop: Optional[tuple] = None, workers: Optional[int] = None) -> list:
    """Independent runs; replica ``r`` uses a seed derived from ``(seed, r)``.

    All replicas start from the same point (the problem's initial point for
    ``seed`` unless ``x0`` is given).
    """
    x0 = problem.initial_point(seed) if x0 is None else x0
    jobs = [(problem, cfg, steps, replica_seed(seed, r), record_every, x0, test_set, lr_drop) for r in range(replicas)]
    return map_ordered(_replica, jobs, workers)


def aggregate(traces: Sequence[RunTrace]) -> dict:
    """Mean and standard error across replicas, column by column."""
    k = traces[0].k
    for tr in traces[1:]:
        if not np.array_equal(tr.k, k):
            raise ValueError("traces were recorded at different steps")
    out = {"k": k}
    cols = {"f": [t.f for t in traces], "grad_sq": [t.grad_sq for t in traces],
            "min_grad_sq": [t.min_grad_sq for t in traces]}
    if traces[0].train_err is not None:
        cols["train_err"] = [t.train_err for t in traces]
        if traces[0].test_err is not None and traces[0].test_err.dtype != object:
            cols["test_err"] = [t.test_err for t in traces]
    r = len(traces)
    for name, vals in cols.items():
        a = np.asarray(vals, dtype=np.float64)
        out[name] = a.mean(axis=0)
        out[name + "_stderr"] = a.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.zeros(a.shape[1])
    return out


@dataclass
class BoundReport:
    which: str
    mean_min: float
    stderr: float
    bound: float
    replicas: int
    slack: float = 1.1

    @property
    def ratio(self) -> float:
        return self.mean_min / self.bound

    @property
    def passed(self) -> bool:
        return self.mean_min <= self.slack * self.bound


def compare_to_bound(traces, b: BoundInputs, which: str, slack: float = 1.1) -> BoundReport:
    """Replica mean of the running-min statistic against the theorem bound."""
    if isinstance(traces, RunTrace):
        traces = [traces]
    cfg = traces[0].config
    if cfg.L is not None and cfg.L != b.L:
        raise ScheduleMismatch(f"trace used L={cfg.L}, bound inputs have L={b.L}")
    if cfg.C is not None and cfg.C != b.C:
        raise ScheduleMismatch(f"trace used C={cfg.C}, bound inputs have C={b.C}")
    expected = schedule_alpha(which, cfg.beta, cfg.s, b.L, b.C, b.t)
    for tr in traces:
        if tr.config.alpha != expected or tr.steps != b.t:
            raise ScheduleMismatch(
                f"trace alpha={tr.config.alpha}, steps={tr.steps}; {which} schedule wants "
                f"alpha={expected}, t={b.t}"
            )
    mins = np.array([tr.final_min for tr in traces])
    se = float(mins.std(ddof=1) / math.sqrt(len(mins))) if len(mins) > 1 else 0.0
    return BoundReport(which, float(mins.mean()), se, bound(which, b, cfg.beta, cfg.s), len(mins), slack)


def log_slope(budgets, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(budgets)``."""
    x = np.log(np.asarray(budgets, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("need at least two points")
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def fit_rate(traces: Sequence[RunTrace]) -> float:
    """Slope of the replica-mean running minimum against the budget, log-log.

    Needs at least three budgets spanning two decades.
    """
    groups = {}
    for tr in traces:
        groups.setdefault(tr.steps, []).append(tr.final_min)
    budgets = sorted(groups)
    if len(budgets) < 3 or budgets[-1] < 100 * budgets[0]:
        raise ValueError(f"insufficient budgets {budgets}: need >= 3 spanning >= 2 decades")
    return log_slope(budgets, [float(np.mean(groups[t])) for t in budgets])
