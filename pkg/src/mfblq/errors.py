"""Exception types shared by the solver modules."""

from __future__ import annotations


class SolveError(RuntimeError):
    """A numerical solve failed; carries the failing equation and time when known."""

    def __init__(self, message: str, *, equation: str | None = None, time: float | None = None):
        self.equation = equation
        self.time = time
        parts = [message]
        if equation is not None:
            parts.append(f"equation={equation}")
        if time is not None:
            parts.append(f"t={time:.17g}")
        super().__init__("; ".join(parts))

    def located(self, equation: str, time: float | None = None) -> "SolveError":
        """Return a copy of this error tagged with equation name and time."""
        t = self.time if time is None else time
        return type(self)(self.args[0].split(";")[0], equation=equation, time=t)


class Singular(SolveError):
    """A pivot fell below the relative singularity threshold."""


class NonFinite(SolveError):
    """A NaN or Inf appeared during integration."""


class NotDecreasing(SolveError):
    """The λ-ladder gaps failed to decrease monotonically."""


class NotSymmetric(ValueError):
    """A matrix expected to be symmetric is not, within tolerance."""


class ParseError(ValueError):
    """A problem file could not be parsed or failed validation."""
