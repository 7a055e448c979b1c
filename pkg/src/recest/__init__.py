"""Recursive estimation for time series.

Stochastic-approximation style recursions ``theta_t = theta_{t-1} +
Gamma_t^{-1} psi_t(theta_{t-1})`` with likelihood, robust (GM) and linear
estimating functions, plus diagnostics and seeded simulation studies.
"""
from .core import (
    ACCUMULATE,
    REEVALUATE,
    EstimatingFunction,
    Normalizer,
    State,
    Trajectory,
    initial_state,
    linear_statistic,
    run,
    solve_linear,
    step,
)
from .errors import (
    DegenerateNormalizer,
    EstimationError,
    NonFiniteUpdate,
    ReplicationFailure,
    SingularMatrix,
)

__version__ = "0.1.0"

__all__ = [
    "ACCUMULATE",
    "REEVALUATE",
    "DegenerateNormalizer",
    "EstimatingFunction",
    "EstimationError",
    "Normalizer",
    "NonFiniteUpdate",
    "ReplicationFailure",
    "SingularMatrix",
    "State",
    "Trajectory",
    "initial_state",
    "linear_statistic",
    "run",
    "solve_linear",
    "step",
]
