"""Indefinite linear-quadratic control of mean-field backward SDEs."""

from .errors import NonFinite, NotDecreasing, NotSymmetric, ParseError, Singular, SolveError
from .model import ProblemSpec, TerminalData, load_problem, parse_problem
from .numerics import Grid, MatrixPath
from .synthesis import synthesize

__version__ = "0.1.0"

__all__ = [
    "Grid", "MatrixPath", "NonFinite", "NotDecreasing", "NotSymmetric", "ParseError",
    "ProblemSpec", "Singular", "SolveError", "TerminalData", "load_problem", "parse_problem",
    "synthesize", "__version__",
]
