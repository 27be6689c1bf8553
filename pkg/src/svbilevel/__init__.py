"""Global solver for pseudoconvex semivectorial bilevel programs."""

from .bnb import SolverConfig, SolverReport, SolverStatus, solve
from .catalog import load_example
from .problem import BilevelProblem, load_problem, validate

__version__ = "0.1.0"

__all__ = [
    "BilevelProblem",
    "SolverConfig",
    "SolverReport",
    "SolverStatus",
    "load_example",
    "load_problem",
    "solve",
    "validate",
]
