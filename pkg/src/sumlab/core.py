"""Stochastic unified momentum (SUM) updates and the algebra around them.

The canonical state of a run is the pair ``(x_k, ys_k)``: the iterate and the
auxiliary sequence whose step length is scaled by ``s``.  Heavy-ball (``s=0``),
Nesterov (``s=1``) and plain stochastic gradient (``s=1/(1-beta)``) are members
of the family.  Everything else in this module (auxiliary sequences,
cumulative coefficients, step-size schedules and convergence bounds) is
derived from that pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

ParamVector = np.ndarray

METHODS = ("shb", "snag", "sg")
SCHEDULES = ("fixed", "thm1", "thm2")

# beta**m below this is flushed to zero
POWER_FLOOR = 1e-300


class NonFiniteError(FloatingPointError):
    """An update produced NaN or Inf entries."""


def as_param(values, name: str = "vector") -> ParamVector:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray, what: str = "gradient") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} has dimension {b.shape[0]}, expected {a.shape[0]}")


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} has non-finite entries")
    return arr


def method_s(method: str, beta: float) -> float:
    """Value of ``s`` that turns SUM into the named method."""
    method = method.lower()
    if method == "shb":
        return 0.0
    if method == "snag":
        return 1.0
    if method == "sg":
        return 1.0 / (1.0 - beta)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _validate_hyper(alpha: float, beta: float, s: float) -> None:
    if not (math.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if not (0.0 <= beta < 1.0):
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if not (math.isfinite(s) and s >= 0):
        raise ValueError(f"s must be >= 0, got {s}")


@dataclass(frozen=True)
class SUMConfig:
    """Hyperparameters of one member of the SUM family.

    With ``schedule`` set to ``"thm1"`` or ``"thm2"`` the step size is derived
    from ``L``, ``C`` and the iteration budget; build such configs through
    :meth:`scheduled` rather than passing ``alpha`` yourself.
    """

    alpha: float
    beta: float
    s: float
    schedule: str = "fixed"
    L: Optional[float] = None
    C: Optional[float] = None
    budget: Optional[int] = None

    def __post_init__(self):
        _validate_hyper(self.alpha, self.beta, self.s)
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.schedule != "fixed":
            if self.L is None or self.C is None or self.budget is None:
                raise ValueError("scheduled configs need L, C and budget")
            expected = schedule_alpha(self.schedule, self.beta, self.s, self.L, self.C, self.budget)
            if self.alpha != expected:
                raise ValueError(
                    f"alpha={self.alpha} disagrees with {self.schedule} schedule value {expected}"
                )

    @classmethod
    def for_method(cls, method: str, alpha: float, beta: float) -> "SUMConfig":
        return cls(alpha=alpha, beta=beta, s=method_s(method, beta))

    @classmethod
    def scheduled(cls, mode: str, beta: float, s: float, L: float, C: float, t: int) -> "SUMConfig":
        alpha = schedule_alpha(mode, beta, s, L, C, t)
        return cls(alpha=alpha, beta=beta, s=s, schedule=mode, L=L, C=C, budget=t)

    @property
    def effective_alpha(self) -> float:
        """Per-gradient step length once momentum has fully accumulated."""
        return self.alpha / (1.0 - self.beta)

    def with_alpha(self, alpha: float) -> "SUMConfig":
        return replace(self, alpha=alpha, schedule="fixed", L=None, C=None, budget=None)


@dataclass(frozen=True)
class SUMState:
    k: int
    x: ParamVector
    ys: ParamVector
    grad_history: Optional[tuple] = field(default=None)

    @classmethod
    def initial(cls, x0, record_history: bool = False) -> "SUMState":
        x = as_param(x0, "x0")
        x.setflags(write=False)
        return cls(k=0, x=x, ys=x, grad_history=() if record_history else None)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def gradients(self) -> np.ndarray:
        """Recorded gradients stacked as a ``(k, d)`` array."""
        if self.grad_history is None:
            raise ValueError("gradient history was not enabled for this run")
        if not self.grad_history:
            return np.zeros((0, self.dim))
        return np.stack([g for _, g in self.grad_history])


def step_unified(state: SUMState, grad, cfg: SUMConfig) -> SUMState:
    """One SUM update; returns a new state and leaves ``state`` untouched."""
    g = np.asarray(grad, dtype=np.float64)
    _check_same_dim(state.x, g)
    y_next = state.x - cfg.alpha * g
    ys_next = state.x - (cfg.s * cfg.alpha) * g
    x_next = y_next + cfg.beta * (ys_next - state.ys)
    _finite(x_next, "iterate")
    _finite(ys_next, "auxiliary iterate")
    x_next.setflags(write=False)
    ys_next.setflags(write=False)
    history = state.grad_history
    if history is not None:
        g_rec = g.copy()
        g_rec.setflags(write=False)
        history = history + ((state.k, g_rec),)
    return SUMState(k=state.k + 1, x=x_next, ys=ys_next, grad_history=history)


def step_shb(x_k, x_km1, grad, alpha: float, beta: float) -> ParamVector:
    """Heavy-ball update in its one-line form; pass ``x_km1 = x_k`` at k=0."""
    x_k = np.asarray(x_k, dtype=np.float64)
    x_km1 = np.asarray(x_km1, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_same_dim(x_k, x_km1, "previous iterate")
    _check_same_dim(x_k, g)
    return _finite(x_k - alpha * g + beta * (x_k - x_km1), "iterate")


def step_snag(y_k, v_k, grad_at_lookahead, alpha: float, beta: float):
    """Nesterov update in velocity form.

    The caller evaluates the gradient at ``y_k + beta * v_k``.  Returns
    ``(y_next, v_next)``.
    """
    y_k = np.asarray(y_k, dtype=np.float64)
    v_k = np.asarray(v_k, dtype=np.float64)
    g = np.asarray(grad_at_lookahead, dtype=np.float64)
    _check_same_dim(y_k, v_k, "velocity")
    _check_same_dim(y_k, g)
    v_next = beta * v_k - alpha * g
    return _finite(y_k + v_next, "iterate"), v_next


def step_snag_two_step(x_k, y_k, grad, alpha: float, beta: float):
    """Nesterov update in the look-ahead form; returns ``(x_next, y_next)``."""
    x_k = np.asarray(x_k, dtype=np.float64)
    y_k = np.asarray(y_k, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_same_dim(x_k, y_k, "y")
    _check_same_dim(x_k, g)
    y_next = x_k - alpha * g
    x_next = y_next + beta * (y_next - y_k)
    return _finite(x_next, "iterate"), y_next


def step_sg(x, grad, effective_alpha: float) -> ParamVector:
    if not effective_alpha > 0:
        raise ValueError("effective_alpha must be > 0")
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_same_dim(x, g)
    return _finite(x - effective_alpha * g, "iterate")


@dataclass(frozen=True)
class AuxSequences:
    p: ParamVector
    v: ParamVector
    z: ParamVector


def aux_sequences(state: SUMState, prev_grad, cfg: SUMConfig, x_prev=None) -> AuxSequences:
    """The shadow sequences ``p_k``, ``v_k`` and ``z_k = x_k + p_k``.

    ``prev_grad`` is the gradient used by the step that produced ``state``.
    ``x_prev`` is the previous iterate; when omitted it is recovered from the
    auxiliary iterate as ``ys_k + s*alpha*prev_grad``.
    """
    x = state.x
    if state.k == 0:
        zero = np.zeros_like(x)
        return AuxSequences(p=zero, v=zero.copy(), z=x.copy())
    if prev_grad is None:
        raise ValueError(f"prev_grad is required at k={state.k}")
    g = np.asarray(prev_grad, dtype=np.float64)
    _check_same_dim(x, g)
    sa = cfg.s * cfg.alpha
    if x_prev is None:
        x_prev = state.ys + sa * g
    v = x - np.asarray(x_prev, dtype=np.float64) + sa * g
    # the beta-free form keeps v meaningful at beta = 0
    p = (cfg.beta / (1.0 - cfg.beta)) * v
    return AuxSequences(p=p, v=v, z=x + p)


def _c_factor(beta: float, s: float) -> float:
    return 1.0 - s * (1.0 - beta)


def beta_powers(beta: float, m_max: int) -> np.ndarray:
    """``beta**m`` for ``m = 0..m_max`` by repeated multiplication, flushed below 1e-300."""
    out = np.zeros(m_max + 1)
    p = 1.0
    for m in range(m_max + 1):
        out[m] = p
        p *= beta
        if p < POWER_FLOOR:
            break
    return out


def eta_coefficient(beta: float, s: float, t: int, k: int) -> float:
    """Weight of gradient ``k`` inside iterate ``t + 1`` of a SUM run."""
    if not 0 <= k <= t:
        raise ValueError(f"need 0 <= k <= t, got k={k}, t={t}")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if s < 0:
        raise ValueError("s must be >= 0")
    p = 1.0
    for _ in range(t - k + 1):
        p *= beta
        if p < POWER_FLOOR:
            p = 0.0
            break
    return (1.0 - p * _c_factor(beta, s)) / (1.0 - beta)


def eta_by_lag(beta: float, s: float, m_max: int) -> np.ndarray:
    """Vector ``e`` with ``e[m] = eta_k^t`` for lag ``m = t - k + 1``; ``e[0]`` is unused."""
    pw = beta_powers(beta, m_max)
    return (1.0 - pw * _c_factor(beta, s)) / (1.0 - beta)


def cumulative_reconstruct(x0, grad_history, beta: float, s: float, alpha: float, t: int) -> ParamVector:
    """Rebuild ``x_{t+1}`` from ``x_0`` and the gradients ``g_0..g_t`` alone."""
    x0 = np.asarray(x0, dtype=np.float64)
    if isinstance(grad_history, tuple) and grad_history and isinstance(grad_history[0], tuple):
        grads = np.stack([g for _, g in grad_history])
    else:
        grads = np.asarray(grad_history, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] < t + 1:
        raise ValueError(f"need at least {t + 1} gradients, got {0 if grads.ndim != 2 else grads.shape[0]}")
    if grads.shape[1] != x0.shape[0]:
        raise ValueError("gradient dimension does not match x0")
    eta = eta_by_lag(beta, s, t + 1)
    # gradient tau has lag t - tau + 1
    weights = eta[t + 1 - np.arange(t + 1)]
    return x0 - alpha * (weights @ grads[: t + 1])


def momentum_mismatch(beta: float, s: float) -> float:
    """The factor ``((1-beta)s - 1)**2`` separating the methods' bounds."""
    return ((1.0 - beta) * s - 1.0) ** 2


def schedule_alpha(mode: str, beta: float, s: float, L: float, C: float, t: int) -> float:
    if L <= 0 or C <= 0 or t < 0:
        raise ValueError("need L > 0, C > 0, t >= 0")
    if mode == "thm1":
        cap = (1.0 - beta) / (2.0 * L)
    elif mode == "thm2":
        cap = (1.0 - beta) / (2.0 * L * (1.0 + momentum_mismatch(beta, s)))
    else:
        raise ValueError(f"unknown schedule {mode!r}")
    return min(cap, C / math.sqrt(t + 1))


@dataclass(frozen=True)
class BoundInputs:
    f0_minus_fstar: float
    L: float
    G: float
    sigma2: float
    C: float
    t: int

    def __post_init__(self):
        vals = (self.f0_minus_fstar, self.L, self.G, self.sigma2, self.C)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("bound inputs must be finite")
        if self.L <= 0 or self.G <= 0 or self.C <= 0:
            raise ValueError("L, G and C must be positive")
        if self.f0_minus_fstar < 0 or self.sigma2 < 0 or self.t < 0:
            raise ValueError("f0 - f*, sigma2 and t must be non-negative")


def bound_thm1(b: BoundInputs, beta: float, s: float) -> float:
    """Upper bound on ``min_k E||grad f(x_k)||^2`` under the common schedule."""
    r = math.sqrt(b.t + 1)
    opt = 2.0 * b.f0_minus_fstar * (1.0 - beta) / (b.t + 1) * max(2.0 * b.L / (1.0 - beta), r / b.C)
    noise = (
        b.L * beta**2 * momentum_mismatch(beta, s) * (b.G**2 + b.sigma2)
        + b.L * b.sigma2 * (1.0 - beta) ** 2
    ) / (1.0 - beta) ** 3
    return opt + b.C / r * noise


def bound_thm2(b: BoundInputs, beta: float, s: float) -> float:
    """Same statistic, for the schedule whose cap shrinks with the momentum mismatch."""
    r = math.sqrt(b.t + 1)
    lam = max(2.0 * b.L * (1.0 + momentum_mismatch(beta, s)) / (1.0 - beta), r / b.C)
    opt = 2.0 * b.f0_minus_fstar * (1.0 - beta) / (b.t + 1) * lam
    noise = (b.L * beta**2 * (b.G**2 + b.sigma2) + b.L * b.sigma2 * (1.0 - beta) ** 2) / (1.0 - beta) ** 3
    return opt + b.C / r * noise


def bound(which: str, b: BoundInputs, beta: float, s: float) -> float:
    if which == "thm1":
        return bound_thm1(b, beta, s)
    if which == "thm2":
        return bound_thm2(b, beta, s)
    raise ValueError(f"unknown bound {which!r}")


def run_unified(x0, grads: Sequence, cfg: SUMConfig, record_history: bool = False) -> list:
    """Feed a fixed gradient stream through :func:`step_unified`; returns all states."""
    state = SUMState.initial(x0, record_history=record_history)
    states = [state]
    for g in grads:
        state = step_unified(state, g, cfg)
        states.append(state)
    return states
