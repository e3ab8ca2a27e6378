"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MVSDEError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MVSDEError, ValueError):
    """Arguments violate a documented precondition."""


class UnsupportedSizeError(MVSDEError):
    """Problem size exceeds the cap of an exact solver."""


class ConvergenceError(MVSDEError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class BlowUpError(MVSDEError):
    """A particle left the admissible state region during time stepping."""

    def __init__(self, particle: int, time: float, value: float):
        super().__init__(f"particle {particle} blew up at t={time:.12g} (|x|={value:.3e})")
        self.particle = particle
        self.time = time
        self.value = value


class DivergenceError(MVSDEError):
    """An integral that must be finite appears to diverge."""


class ResolutionError(MVSDEError):
    """Requested quadrature exceeds the configured budget."""


class ConditioningError(MVSDEError):
    """A matrix that must be inverted is singular or badly conditioned."""


class InvalidHorizonError(InvalidInputError):
    """Time horizon incompatible with the delay (requires T > r)."""


class DegenerateInputError(InvalidInputError):
    """Inputs make the requested quantity undefined."""


class InvalidTestFunctionError(InvalidInputError):
    """A test functional violates its declared range on the samples."""


class UnsupportedModelError(MVSDEError):
    """Coefficient structure does not meet the verifier's requirements."""


class ConfigError(MVSDEError):
    """Configuration failed validation; carries every problem found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))
