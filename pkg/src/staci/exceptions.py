# ABOUTME: Custom exception hierarchy for staci error handling
# ABOUTME: Provides specialized exceptions with recovery hints for each module
"""Custom exceptions for staci"""


class StaciError(Exception):
    """Base exception for all staci errors"""

    def __init__(self, message: str, recovery_hint: str | None = None):
        super().__init__(message)
        self.recovery_hint = recovery_hint

    def __str__(self):
        base = super().__str__()
        if self.recovery_hint:
            return f"{base}\nHint: {self.recovery_hint}"
        return base


class ConfigError(StaciError):
    """Configuration related errors"""

    pass


class ValidationError(StaciError):
    """Invalid domain objects or argument shapes"""

    pass


class NetworkError(StaciError):
    """Stream network topology errors"""

    pass


class CovarianceError(StaciError):
    """Covariance estimation, factorization and fitting errors"""

    pass


class CalibrationError(StaciError):
    """Conformal calibration errors"""

    pass


class DataError(StaciError):
    """Data file reading/writing errors"""

    pass


class ExperimentError(StaciError):
    """Experiment harness errors"""

    pass
