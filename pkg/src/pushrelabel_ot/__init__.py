"""Push-relabel solvers for approximate assignment and optimal transport."""

from .core import (
    AssignmentInstance,
    DualState,
    InputFormatError,
    InvariantViolation,
    Matching,
    NumericalError,
    OTInstance,
    ParameterError,
    ScaledCosts,
    TransportPlan,
    matching_cost,
    scale_round_costs,
    slack,
)
from .assignment import SolveStats, solve
from .transport import ScaledMasses, scale_and_round, solve_ot

__all__ = [
    "AssignmentInstance", "DualState", "InputFormatError", "InvariantViolation", "Matching",
    "NumericalError", "OTInstance", "ParameterError", "ScaledCosts", "ScaledMasses",
    "SolveStats", "TransportPlan", "matching_cost", "scale_and_round", "scale_round_costs",
    "slack", "solve", "solve_ot",
]

__version__ = "0.1.0"
