"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or incomplete device description.

    ``path`` names the offending field, e.g. ``"poling.defects[2]"``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NumericalAccuracyError(RuntimeError):
    """A numerical routine failed to reach its accuracy target."""


class FitError(RuntimeError):
    """Least-squares fit could not be carried out."""

    def __init__(self, message, residual_rms=None, rank=None):
        self.residual_rms = residual_rms
        self.rank = rank
        super().__init__(message)


class DegenerateConfigurationError(ValueError):
    """Inputs for which the requested quantity is undefined."""
