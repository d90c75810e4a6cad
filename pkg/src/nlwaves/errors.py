"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class NLWaveError(Exception):
    """Base class for every error raised by this package."""


class DomainError(NLWaveError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class QuadratureDivergence(NLWaveError):
    """A quadrature failed to stabilize as its window was enlarged."""


class GridMismatch(NLWaveError, ValueError):
    """The grid's ghost buffer is too narrow for the kernel."""


class SearchFailure(NLWaveError):
    """A bracketing search for a minimizer did not find an interior bracket."""

    def __init__(self, message: str, boundary_value: float | None = None):
        super().__init__(message)
        self.boundary_value = boundary_value


class NoRoot(NLWaveError):
    """The requested speed is below the infimum of G, so no root exists."""

    def __init__(self, message: str, c_R: float):
        super().__init__(message)
        self.c_R = c_R


class ParamError(DomainError):
    """Model parameters violate the model's standing assumptions."""


class NoConvergence(NLWaveError):
    """Relaxation stalled above tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CollapseToEquilibrium(NLWaveError):
    """The relaxed profile flattened onto a constant state."""


class BlowUp(NLWaveError):
    """The numerical solution left any reasonable bound."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class StepFailure(NLWaveError):
    """A step error re-raised by ``run`` with the failing time attached."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


class DomainTooSmall(NLWaveError):
    """Mass escaped the containment window during a decay experiment."""


class DegenerateInput(NLWaveError):
    """Input data make the requested fit meaningless (e.g. identically zero)."""


class InsufficientHistory(NLWaveError):
    """Fewer snapshots than a finite-difference stencil requires."""


class Overflow(NLWaveError, OverflowError):
    """An exponential weight overflowed double precision."""


class ConfigError(NLWaveError, ValueError):
    """Malformed configuration text."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        prefix = f"[{', '.join(loc)}] " if loc else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class ParseError(ConfigError):
    """Config text could not be parsed."""


class ValidationError(ConfigError):
    """Config parsed but a value violates a precondition."""
