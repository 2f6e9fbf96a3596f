"""Numerics for the degenerate heat equation u_t = u u_xx / 2 on the line,
a half-line and a bounded interval."""

__version__ = "0.1.0"

from .transform import DomainCase, Transform, make_transform
from .initial import InitialCondition, make_initial, validate_hypothesis
from .solver import SolveResult, SolverConfig, StepFailure, run, solve

__all__ = [
    "DomainCase", "Transform", "make_transform", "InitialCondition", "make_initial",
    "validate_hypothesis", "SolveResult", "SolverConfig", "StepFailure", "run", "solve",
    "__version__",
]
