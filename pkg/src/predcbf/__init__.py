"""Soft-constrained safe MPC whose optimal slack sum acts as a predictive control barrier function."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ConfigurationError,
    Polytope,
    ProblemPreset,
    SystemModel,
    TerminalSet,
    UsageError,
    load_problem,
    preset,
)
from .safempc import Controller, SafeMpcProblem, SafeMpcSolution, solve  # noqa: E402

__all__ = [
    "ConfigurationError",
    "Controller",
    "Polytope",
    "ProblemPreset",
    "SafeMpcProblem",
    "SafeMpcSolution",
    "SystemModel",
    "TerminalSet",
    "UsageError",
    "load_problem",
    "preset",
    "solve",
]
