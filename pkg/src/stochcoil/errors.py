"""Exception hierarchy. The CLI maps these onto exit codes."""


class StochcoilError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(StochcoilError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class NumericalError(StochcoilError):
    """Numerical abort during a computation (CLI exit code 3)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class DegenerateCurveError(NumericalError):
    """A curve tangent vanished where a nonzero arclength speed is required."""


class IllConditionedKernelError(NumericalError):
    """Covariance factorization failed even at the maximum jitter level."""


class SingularEvaluationError(NumericalError):
    """A field evaluation point is too close to a coil filament."""


class FieldLineError(NumericalError):
    """Field-line integration left the toroidal regime (B_phi ~ 0 or sign change)."""


class AxisNotFoundError(NumericalError):
    """Newton iteration for the magnetic axis did not converge."""


class RotationalTransformError(NumericalError):
    """The full-turn tangent map is hyperbolic; no rotation angle exists."""
