"""Runtime residual checks for the algebraic identities of SUM.

Each check drives the unified update and an independent route (a literal
single-method implementation, the auxiliary-sequence recursions, or the
cumulative-coefficient formula) along one stochastic run and reports the
largest discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    SUMConfig,
    SUMState,
    aux_sequences,
    cumulative_reconstruct,
    method_s,
    step_sg,
    step_shb,
    step_snag,
    step_snag_two_step,
    step_unified,
)
from .problems import IndexStream, StochasticProblem
from .seeding import derive_seed

EQUIV_STEP_TOL = 1e-10
EQUIV_TOTAL_TOL = 1e-8
AUX_TOL = 1e-12
RECON_TOL = 1e-8


@dataclass
class EquivalenceResult:
    method: str
    max_step: float  # largest one-step discrepancy from a common starting point
    max_total: float  # largest discrepancy between the two free-running trajectories

    @property
    def ok(self) -> bool:
        return self.max_step <= EQUIV_STEP_TOL and self.max_total <= EQUIV_TOTAL_TOL


def _literal_step(method, lit, grad, alpha, beta):
    if method == "shb":
        x, x_prev = lit
        return step_shb(x, x_prev, grad, alpha, beta), x
    if method == "snag":
        x, y = lit
        return step_snag_two_step(x, y, grad, alpha, beta)
    if method == "snag-velocity":
        y, v = lit
        return step_snag(y, v, grad, alpha, beta)
    x, _ = lit
    return step_sg(x, grad, alpha / (1.0 - beta)), x


def _as_sum_iterate(method, lit, beta):
    """The literal state's counterpart of the SUM iterate ``x_k``.

    For the velocity form this is the look-ahead point ``y_k + beta v_k``,
    which is also where that form evaluates its gradient.
    """
    if method == "snag-velocity":
        y, v = lit
        return y + beta * v
    return lit[0]


def _shadow(method, state, prev_x, prev_ys):
    """Literal-form state built from the unified run's current coordinates."""
    if method == "snag":
        return state.x, state.ys
    if method == "snag-velocity":
        return state.ys, state.ys - prev_ys
    return state.x, prev_x


def equivalence_check(problem: StochasticProblem, method: str, alpha: float, beta: float,
                      steps: int, seed: int, s_override=None) -> EquivalenceResult:
    """Compare SUM with ``s`` for ``method`` against the literal method.

    ``method`` is one of ``shb``, ``snag`` (look-ahead form), ``snag-velocity``
    or ``sg``.  Both trajectories consume the same index stream and each
    evaluates the sampled example's gradient at its own iterate.  The
    one-step discrepancy advances the literal form from the unified run's
    current state with the unified run's gradient.
    """
    base = "snag" if method.startswith("snag") else method
    s = method_s(base, beta) if s_override is None else s_override
    cfg = SUMConfig(alpha=alpha, beta=beta, s=s)
    x0 = problem.initial_point(seed)
    state = SUMState.initial(x0)
    if method == "snag-velocity":
        lit = (x0.copy(), np.zeros_like(x0))
    else:
        lit = (x0.copy(), x0.copy())
    prev_x, prev_ys = state.x, state.ys
    stream = IndexStream(problem.n, derive_seed(seed, "equivalence"))
    max_step = max_total = 0.0
    for _ in range(steps):
        i = stream.next()
        g = problem.example_grad(state.x, i)
        new_state = step_unified(state, g, cfg)
        one = _literal_step(method, _shadow(method, state, prev_x, prev_ys), g, alpha, beta)
        max_step = max(max_step, float(np.max(np.abs(_as_sum_iterate(method, one, beta) - new_state.x))))

        g_lit = problem.example_grad(_as_sum_iterate(method, lit, beta), i)
        lit = _literal_step(method, lit, g_lit, alpha, beta)
        max_total = max(max_total, float(np.max(np.abs(_as_sum_iterate(method, lit, beta) - new_state.x))))
        prev_x, prev_ys = state.x, state.ys
        state = new_state
    return EquivalenceResult(method, max_step, max_total)


@dataclass
class AuxResult:
    rec_z: float  # max of residual / (1 + ||z_k||) for the z recursion
    rec_v: float  # same for the v recursion

    @property
    def ok(self) -> bool:
        return self.rec_z <= AUX_TOL and self.rec_v <= AUX_TOL


def aux_residuals(problem: StochasticProblem, cfg: SUMConfig, steps: int, seed: int) -> AuxResult:
    """Worst scaled residual of the ``z`` and ``v`` recursions along one run."""
    state = SUMState.initial(problem.initial_point(seed))
    stream = IndexStream(problem.n, derive_seed(seed, "aux"))
    aux = aux_sequences(state, None, cfg)
    rz = rv = 0.0
    coef = ((1.0 - cfg.beta) * cfg.s - 1.0) * cfg.alpha
    for _ in range(steps):
        g = problem.example_grad(state.x, stream.next())
        new_state = step_unified(state, g, cfg)
        new_aux = aux_sequences(new_state, g, cfg, x_prev=state.x)
        scale = 1.0 + float(np.linalg.norm(aux.z))
        z_res = new_aux.z - (aux.z - cfg.alpha / (1.0 - cfg.beta) * g)
        v_res = new_aux.v - (cfg.beta * aux.v + coef * g)
        rz = max(rz, float(np.linalg.norm(z_res)) / scale)
        rv = max(rv, float(np.linalg.norm(v_res)) / scale)
        state, aux = new_state, new_aux
    return AuxResult(rz, rv)


def reconstruction_error(problem: StochasticProblem, cfg: SUMConfig, steps: int, seed: int) -> float:
    """Relative gap between the live iterate and its cumulative-sum reconstruction."""
    state = SUMState.initial(problem.initial_point(seed), record_history=True)
    x0 = state.x
    stream = IndexStream(problem.n, derive_seed(seed, "reconstruct"))
    for _ in range(steps):
        state = step_unified(state, problem.example_grad(state.x, stream.next()), cfg)
    rebuilt = cumulative_reconstruct(x0, state.grad_history, cfg.beta, cfg.s, cfg.alpha, steps - 1)
    return float(np.linalg.norm(rebuilt - state.x) / max(np.linalg.norm(state.x), 1e-300))


def s_grid(beta: float) -> list:
    return [0.0, 1.0, 2.0, 1.0 / (1.0 - beta)]


@dataclass
class SuiteReport:
    equivalence: list
    aux: dict
    reconstruction: dict

    @property
    def max_equiv_step(self) -> float:
        return max(r.max_step for r in self.equivalence)

    @property
    def max_equiv_total(self) -> float:
        return max(r.max_total for r in self.equivalence)

    @property
    def max_rec_z(self) -> float:
        return max(r.rec_z for r in self.aux.values())

    @property
    def max_rec_v(self) -> float:
        return max(r.rec_v for r in self.aux.values())

    @property
    def max_reconstruction(self) -> float:
        return max(self.reconstruction.values())

    @property
    def ok(self) -> bool:
        return (all(r.ok for r in self.equivalence) and all(r.ok for r in self.aux.values())
                and self.max_reconstruction <= RECON_TOL)

    def lines(self):
        yield f"equivalence per-step   max {self.max_equiv_step:.3e}  tol {EQUIV_STEP_TOL:.0e}"
        yield f"equivalence cumulative max {self.max_equiv_total:.3e}  tol {EQUIV_TOTAL_TOL:.0e}"
        yield f"z recursion            max {self.max_rec_z:.3e}  tol {AUX_TOL:.0e}"
        yield f"v recursion            max {self.max_rec_v:.3e}  tol {AUX_TOL:.0e}"
        yield f"reconstruction (rel)   max {self.max_reconstruction:.3e}  tol {RECON_TOL:.0e}"


def run_suite(problems: dict, betas=(0.0, 0.5, 0.9), alpha: float = 0.01, seed: int = 0,
              equiv_steps: int = 1000, aux_steps: int = 500, recon_steps: int = 200,
              s_offset: float = 0.0) -> SuiteReport:
    """All identity checks over a grid of ``beta`` and ``s``.

    ``s_offset`` is added to ``s`` on the unified side only; any nonzero value
    must make the equivalence checks fail.
    """
    equiv, aux, recon = [], {}, {}
    for pname, prob in problems.items():
        for beta in betas:
            for method in ("shb", "snag", "snag-velocity", "sg"):
                base = "snag" if method.startswith("snag") else method
                s = method_s(base, beta) + s_offset
                res = equivalence_check(prob, method, alpha, beta, equiv_steps, seed, s_override=s)
                res.method = f"{pname}/{method}/beta={beta}"
                equiv.append(res)
            for s in s_grid(beta):
                cfg = SUMConfig(alpha=alpha, beta=beta, s=s)
                key = (pname, beta, s)
                aux[key] = aux_residuals(prob, cfg, aux_steps, seed)
                recon[key] = reconstruction_error(prob, cfg, recon_steps, seed)
    return SuiteReport(equiv, aux, recon)
