"""Exception types shared across the package."""


class CertDWError(Exception):
    """Base class for all certdw errors."""


class DomainError(CertDWError, ValueError):
    """An argument violates an operation's documented domain."""


class DegenerateTriggerError(DomainError):
    """A trigger with zero perturbation was requested where one cannot exist."""


class RepresentativeUnavailableError(CertDWError):
    """No correctly predicted sample is available for some class."""

    def __init__(self, class_label, message=None):
        self.class_label = class_label
        super().__init__(
            message or f"no correctly predicted sample available for class {class_label}"
        )


class InsufficientCalibrationError(CertDWError):
    """The calibration set is too small for the requested significance level."""


class UnsupportedOperationError(CertDWError, TypeError):
    """The operation is not defined for this classifier kind."""


class TrainingFailureError(CertDWError):
    """Training diverged (loss became non-finite)."""
