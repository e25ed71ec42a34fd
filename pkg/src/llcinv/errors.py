"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the physical/mathematical domain of an operation."""


class InfeasibleError(RuntimeError):
    """A design requirement cannot be met (gain, stress margin, filter band, ...)."""


class ConfigError(ValueError):
    """A configuration file or simulation setup is invalid."""


class NumericError(RuntimeError):
    """A simulation diverged; carries the last time that was still finite."""

    def __init__(self, message: str, last_good_time: float | None = None):
        super().__init__(message)
        self.last_good_time = last_good_time
