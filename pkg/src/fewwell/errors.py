class NumericalError(RuntimeError):
    """A numerical routine failed (eigensolver, grid convergence)."""


class ConfigError(ValueError):
    """Malformed run configuration or sequence file."""


class CalibrationRangeError(ValueError):
    """Requested tweezer tilt lies outside the reachable range."""
