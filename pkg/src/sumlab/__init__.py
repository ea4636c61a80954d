"""Stochastic unified momentum (SUM): one update covering heavy-ball,
Nesterov and plain SGD, with convergence and stability experiments."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    METHODS,
    BoundInputs,
    NonFiniteError,
    SUMConfig,
    SUMState,
    aux_sequences,
    bound,
    bound_thm1,
    bound_thm2,
    cumulative_reconstruct,
    eta_by_lag,
    eta_coefficient,
    method_s,
    run_unified,
    schedule_alpha,
    step_unified,
)
from .problems import (  # noqa: E402
    Dataset,
    QuadraticProblem,
    SigmoidRegression,
    TinyMLP,
    estimate_constants,
    make_problem,
)
from .stability import stability_bound, stability_experiment  # noqa: E402

__all__ = [
    "METHODS", "BoundInputs", "NonFiniteError", "SUMConfig", "SUMState", "aux_sequences", "bound",
    "bound_thm1", "bound_thm2", "cumulative_reconstruct", "eta_by_lag", "eta_coefficient", "method_s",
    "run_unified", "schedule_alpha", "step_unified", "Dataset", "QuadraticProblem", "SigmoidRegression",
    "TinyMLP", "estimate_constants", "make_problem", "stability_bound", "stability_experiment",
]
