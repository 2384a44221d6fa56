"""Exception types shared by the library and the ``pyqmu`` driver."""


class ValidationError(ValueError):
    """A precondition on an input was violated.

    ``field`` names the offending argument or configuration entry when one
    can be identified.
    """

    def __init__(self, message, field=None):
        self.field = field
        self.reason = message
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    """A run configuration document failed validation."""


class EmptyConfigError(ConfigError):
    pass


class ReportValidationError(ValidationError):
    """A report is missing a required field or carries an invalid value."""


class InvariantViolation(RuntimeError):
    """A numerical post-condition failed beyond its stated tolerance."""
