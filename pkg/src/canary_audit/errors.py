"""Exception types shared across the package.

Invalid arguments raise plain ValueError; these classes cover domain
failures that callers may want to catch selectively.
"""


class AuditError(Exception):
    """Base class for domain errors raised by this package."""


class InvalidStateError(AuditError):
    """An operation hit a value that should not occur (e.g. non-finite gradients)."""


class TrainingDiverged(AuditError):
    """Mean training loss became non-finite.

    Carries the last step whose loss was still finite.
    """

    def __init__(self, step: int, message: str | None = None):
        self.last_good_step = step
        super().__init__(message or f"training diverged; last good step was {step}")


class UndefinedMetricError(AuditError):
    """A metric is undefined for the given inputs (e.g. zero denominator)."""


class CalibrationError(AuditError):
    """The audit's null calibration failed; channel settings are degenerate."""


class MissingArtifactError(AuditError):
    """A required on-disk artifact (checkpoint, bundle, fragment) is absent."""


class CanaryFractionWarning(UserWarning):
    """Inserted canaries exceed the intended share of the training corpus."""
