"""stopflow: free-boundary solver for optimal stopping of one-dimensional diffusions.

The solver computes the value function of a running-reward stopping problem
by constructing the fundamental solution of the associated linear ODE
system, locating the maximal positivity intervals that make up the
continuation region, and verifying the result independently with Monte
Carlo simulation of the stopped process.
"""

from . import errors, fundmat, intervals, mc, odesol, problem, value
from .intervals import MaximalInterval, maximal_intervals
from .problem import ProblemSpec, Tolerances, ValidatedProblem, validate
from .value import ValueFunction, solve

__version__ = "0.1.0"

__all__ = [
    "MaximalInterval",
    "ProblemSpec",
    "Tolerances",
    "ValidatedProblem",
    "ValueFunction",
    "errors",
    "fundmat",
    "intervals",
    "maximal_intervals",
    "mc",
    "odesol",
    "problem",
    "solve",
    "validate",
    "value",
    "__version__",
]
