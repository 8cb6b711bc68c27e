"""Exception types shared across the package."""


class VelocituneError(Exception):
    """Base class for all velocitune-specific errors."""


class InvalidWeightsError(VelocituneError):
    """Weight values violate the simplex contract (negative, all-zero, bad sum)."""


class InvalidDomainSetError(VelocituneError):
    """Domain set is malformed (empty, duplicate names, non-positive token counts)."""


class InvalidLossError(VelocituneError):
    """Loss values are non-finite or negative."""


class DegenerateDomainError(VelocituneError):
    """A domain's loss bounds make the requested update undefined."""


class InsufficientDataError(VelocituneError):
    """Too few checkpoints to fit the scaling law."""


class FitFailureError(VelocituneError):
    """Curve fit could not produce an acceptable parameter triple.

    ``best_residual`` carries the lowest objective value seen across starts,
    or ``None`` if no start produced a finite objective.
    """

    def __init__(self, message: str, best_residual: float | None = None):
        super().__init__(message)
        self.best_residual = best_residual


class ProtocolError(VelocituneError):
    """Scheduler or service call sequence violates the step protocol."""


class OrderingError(VelocituneError):
    """Steps were not presented in strictly increasing order."""


class ConfigError(VelocituneError):
    """Run configuration failed to parse or validate."""


class CheckpointError(VelocituneError):
    """Checkpoint file is corrupt, truncated, or has an unsupported version."""
