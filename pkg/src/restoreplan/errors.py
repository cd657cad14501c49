"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A value violates a documented invariant or parameter range."""


class FormatError(ValueError):
    """A file does not conform to the expected on-disk format."""


class RegistrationError(ValueError):
    """A tool could not be added to a registry."""


class PlanError(ValueError):
    """A plan cannot be executed against the active registry."""


class CalibrationError(ValueError):
    """Not enough data to calibrate a scorer."""


class ConfigError(ValueError):
    """Bad configuration document, override or command-line usage."""


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss, gradient or weight."""
