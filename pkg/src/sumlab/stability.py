"""Coupled runs on neighbouring datasets and the stability growth recursion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import SUMConfig, SUMState, eta_by_lag, method_s, step_unified
from .parallel import map_ordered
from .problems import Dataset, StochasticProblem, draw_test_set
from .seeding import derive_seed

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Raised when the objective blows up relative to its starting value."""


@dataclass
class NeighborPair:
    base: Dataset
    perturbed: Dataset
    j: int


def make_neighbor_pair(dataset: Dataset, j: int, seed: int, identical: bool = False) -> NeighborPair:
    """Replace example ``j`` by a fresh draw from the generating distribution.

    With ``identical=True`` the perturbed dataset equals the base one, which
    is the control for the shared index stream.
    """
    if not 0 <= j < dataset.n:
        raise IndexError(f"j={j} out of range for n={dataset.n}")
    if identical:
        return NeighborPair(dataset, dataset.with_example(j, dataset.features[j], dataset.labels[j]), j)
    rng = np.random.default_rng(derive_seed(seed, "neighbor-replacement"))
    a, b = dataset.source.draw(rng, 1)
    return NeighborPair(dataset, dataset.with_example(j, a[0], b[0]), j)


def _check_divergence(problem, x, f0):
    f = problem.loss(x)
    if not math.isfinite(f) or f > DIVERGENCE_FACTOR * max(f0, 1e-300):
        raise DivergenceError(f"objective {f:.6g} exceeds {DIVERGENCE_FACTOR:g} x f(x0)={f0:.6g}")


def coupled_run(pair: NeighborPair, cfg: SUMConfig, steps: int, seed: int,
                problem: Optional[StochasticProblem] = None, x0=None,
                check_every: Optional[int] = None) -> np.ndarray:
    """Two SUM instances on ``S`` and ``S'`` driven by one index stream.

    Returns ``||x_t - x'_t||`` for ``t = 0..steps``.
    """
    from .problems import PROBLEM_TYPES, IndexStream

    if problem is None:
        prob_a = PROBLEM_TYPES[pair.base.kind](pair.base)
    else:
        prob_a = problem.with_dataset(pair.base)
    prob_b = prob_a.with_dataset(pair.perturbed)
    x0 = prob_a.initial_point(seed) if x0 is None else np.asarray(x0, dtype=np.float64)
    sa = SUMState.initial(x0)
    sb = SUMState.initial(x0)
    stream = IndexStream(pair.base.n, derive_seed(seed, "index-stream"))
    check_every = check_every or max(1, steps // 100)
    f0 = prob_a.loss(x0)
    delta = np.zeros(steps + 1)
    for k in range(steps):
        i = stream.next()
        sa = step_unified(sa, prob_a.example_grad(sa.x, i), cfg)
        sb = step_unified(sb, prob_b.example_grad(sb.x, i), cfg)
        delta[k + 1] = np.linalg.norm(sa.x - sb.x)
        if (k + 1) % check_every == 0:
            _check_divergence(prob_a, sa.x, f0)
            _check_divergence(prob_b, sb.x, f0)
    return delta


@dataclass
class StabilityBound:
    values: np.ndarray
    tail_approx: bool = False


def stability_bound(cfg: SUMConfig, G: float, L: float, n: int, steps: int,
                    exact_limit: int = 100_000) -> StabilityBound:
    """Run the growth recursion for ``Delta_t`` forward as an equality.

    ``Delta_{t+1} = sum_k eta_k^t * alpha * (2G/n + (1 - 1/n) L Delta_k)``
    with ``Delta_0 = 0``.  Direct evaluation is quadratic in ``steps``.  Above
    ``exact_limit`` the lags whose ``beta**lag`` has flushed to zero are
    lumped into one running sum with ``eta = 1/(1 - beta)``, and the result is
    flagged.
    """
    if G <= 0 or L <= 0 or n < 1:
        raise ValueError("need G > 0, L > 0, n >= 1")
    alpha, beta = cfg.alpha, cfg.beta
    eta = eta_by_lag(beta, cfg.s, steps + 1)
    delta = np.zeros(steps + 1)
    w = np.zeros(steps + 1)
    inject = 2.0 * alpha * G / n
    carry = (1.0 - 1.0 / n) * alpha * L
    tail = steps > exact_limit
    window = int(np.count_nonzero(eta[1:] != eta[-1])) + 1 if tail else steps + 1
    lumped = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            w[t] = inject + carry * delta[t]
            if not tail:
                # lag of gradient k inside Delta_{t+1} is t - k + 1
                delta[t + 1] = w[: t + 1] @ eta[t + 1:0:-1]
                continue
            lo = max(0, t + 1 - window)
            if lo > 0:
                lumped += w[lo - 1]
            delta[t + 1] = w[lo: t + 1] @ eta[t + 1 - lo:0:-1] + lumped / (1.0 - beta)
    return StabilityBound(delta, tail)


@dataclass
class CoupledRunResult:
    t: np.ndarray
    delta: np.ndarray  # (replicas, len(t))
    bound: np.ndarray
    config: SUMConfig
    js: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tail_approx: bool = False

    @property
    def delta_mean(self) -> np.ndarray:
        return self.delta.mean(axis=0)

    @property
    def delta_stderr(self) -> np.ndarray:
        r = self.delta.shape[0]
        if r < 2:
            return np.zeros(self.delta.shape[1])
        return self.delta.std(axis=0, ddof=1) / math.sqrt(r)

    def final_interval(self, level: float = 0.8):
        from statistics import NormalDist

        z = NormalDist().inv_cdf(0.5 + level / 2)
        m, se = self.delta_mean[-1], self.delta_stderr[-1]
        return m - z * se, m + z * se

    def dominated(self, slack: float = 1.1) -> bool:
        return bool(np.all(self.delta_mean <= slack * self.bound))


def _replica(args):
    problem, cfg, steps, seed, r, identical, record = args
    rng = np.random.default_rng(derive_seed(seed, "neighbor-index", r))
    j = int(rng.integers(0, problem.n))
    pair = make_neighbor_pair(problem.dataset, j, derive_seed(seed, "neighbor", r), identical=identical)
    delta = coupled_run(pair, cfg, steps, derive_seed(seed, "coupled", r), problem=problem,
                        x0=problem.initial_point(seed))
    return j, delta[record]


def stability_experiment(problem: StochasticProblem, cfg: SUMConfig, steps: int, replicas: int,
                         seed: int, G: Optional[float] = None, L: Optional[float] = None,
                         record_every: int = 1, identical: bool = False,
                         workers: Optional[int] = None) -> CoupledRunResult:
    """Monte-Carlo estimate of ``Delta_t`` with the matching bound.

    Each replica draws its own replaced position ``j``, replacement example
    and index stream.  The replica streams depend on ``seed`` and the replica
    number only, so different configs see common random numbers.
    """
    record = np.unique(np.r_[np.arange(0, steps + 1, record_every), steps])
    jobs = [(problem, cfg, steps, seed, r, identical, record) for r in range(replicas)]
    results = map_ordered(_replica, jobs, workers)
    js = np.array([j for j, _ in results], dtype=np.int64)
    delta = np.stack([d for _, d in results])
    consts = problem.constants
    G = consts.G if G is None else G
    L = consts.L if L is None else L
    sb = stability_bound(cfg, G, L, problem.n, steps)
    return CoupledRunResult(record, delta, sb.values[record], cfg, js, sb.tail_approx)


@dataclass
class GapCurves:
    t: np.ndarray
    train_err: np.ndarray  # (replicas, len(t))
    test_err: np.ndarray
    train_loss: np.ndarray
    test_loss: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.train_err - self.test_err)

    @property
    def loss_gap(self) -> np.ndarray:
        return np.abs(self.train_loss - self.test_loss)

    @staticmethod
    def _stats(a):
        r = a.shape[0]
        se = a.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.zeros(a.shape[1])
        return a.mean(axis=0), se

    def summary(self):
        out = {}
        for name in ("train_err", "test_err", "gap", "loss_gap"):
            out[name], out[name + "_stderr"] = self._stats(getattr(self, name))
        return out


def _gap_replica(args):
    problem, cfg, steps, seed, r, record, n_test = args
    from .problems import IndexStream

    test_a, test_b = draw_test_set(problem, n_test, derive_seed(seed, "gap-test", r))
    stream = IndexStream(problem.n, derive_seed(seed, "gap-index", r))
    state = SUMState.initial(problem.initial_point(derive_seed(seed, "gap-init", r)))
    rows = []
    rec = set(int(t) for t in record)
    f0 = problem.loss(state.x)

    def snap(x):
        return (problem.error(x), problem.error(x, test_a, test_b),
                problem.loss(x), float(np.mean(problem.example_losses(x, test_a, test_b))))

    if 0 in rec:
        rows.append(snap(state.x))
    check_every = max(1, steps // 100)
    for k in range(steps):
        i = stream.next()
        state = step_unified(state, problem.example_grad(state.x, i), cfg)
        if (k + 1) % check_every == 0:
            _check_divergence(problem, state.x, f0)
        if k + 1 in rec:
            rows.append(snap(state.x))
    return np.array(rows)


def gap_experiment(problem: StochasticProblem, configs: dict, steps: int, replicas: int, seed: int,
                   record_every: int = 50, n_test: Optional[int] = None,
                   workers: Optional[int] = None) -> dict:
    """Train/test error curves per method with a fresh test set per replica.

    ``configs`` maps a method label to its :class:`SUMConfig`.  Replica ``r``
    uses the same initial point, index stream and test set for every method.
    """
    n_test = problem.n if n_test is None else n_test
    record = np.unique(np.r_[np.arange(0, steps + 1, record_every), steps])
    out = {}
    for name, cfg in configs.items():
        jobs = [(problem, cfg, steps, seed, r, record, n_test) for r in range(replicas)]
        rows = np.stack(map_ordered(_gap_replica, jobs, workers))
        out[name] = GapCurves(record, rows[:, :, 0], rows[:, :, 1], rows[:, :, 2], rows[:, :, 3])
    return out


def method_configs(alpha: float, beta: float, methods=("shb", "snag", "sg")) -> dict:
    return {m: SUMConfig(alpha=alpha, beta=beta, s=method_s(m, beta)) for m in methods}
