"""
Error hierarchy shared by the numerical services and the management commands.

Each error carries the process exit code the command layer reports for it.
"""


class LaboratoryError(Exception):
    """Base class for every error raised by the laboratory."""

    exit_code = 3


class ConfigurationError(LaboratoryError):
    """Malformed or inconsistent experiment configuration."""

    exit_code = 2

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class MissingInputError(LaboratoryError):
    """A required input bundle or file does not exist."""

    exit_code = 4


class DomainError(LaboratoryError, ValueError):
    """Input outside the domain of a transform (K = 0, l = 0, ...)."""


class HyperbolicityError(LaboratoryError):
    """Strict hyperbolicity lost: u = v, l >= 0 or gap below gap_min."""


class RefinementError(LaboratoryError):
    """Integrator step too large for the requested tolerance."""


class DivergenceError(LaboratoryError):
    """Curvature profile is not integrable on [0, inf)."""


class SignSwitchError(LaboratoryError):
    """No positive tail of the sign-switch function on the grid."""


class BlowUpError(LaboratoryError):
    """The explicit comparison function blows up in the requested range."""


class FrameIntegrationError(LaboratoryError):
    """Gauss-Weingarten frame integration failed."""


class SolverAbort(LaboratoryError):
    """Time marching stopped; keeps the last accepted state for diagnostics."""

    def __init__(self, message, state=None, snapshot_path=None):
        super().__init__(message)
        self.state = state
        self.snapshot_path = snapshot_path
