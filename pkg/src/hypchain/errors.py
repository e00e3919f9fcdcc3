"""Exception types shared across the package."""


class HypchainError(Exception):
    """Base class for all package-specific errors."""


class SpecValidationError(HypchainError):
    """A chain specification or scenario config failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class GridError(HypchainError):
    """Requested time step is not commensurate with the transport speeds.

    Carries a suggested admissible step so callers can recover.
    """

    def __init__(self, message, suggested_h=None):
        super().__init__(message)
        self.suggested_h = suggested_h


class CompatibilityError(HypchainError):
    """Initial data violates the boundary relations beyond tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class AssumptionError(HypchainError):
    """A structural assumption required by an operation does not hold."""

    def __init__(self, message, assumption=None, detail=None):
        super().__init__(message)
        self.assumption = assumption
        self.detail = detail


class IdentificationError(HypchainError):
    """Impulse-response identification failed its validation threshold."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DesignError(HypchainError):
    """Feedback design failed (uncontrollable, margin not met, ...)."""


class NumericsError(HypchainError):
    """A numerical routine failed to converge or lost accuracy."""
