"""Exception hierarchy shared by all processing stages."""


class PbrError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PbrError, ValueError):
    """An argument or configuration value is out of contract."""

    def __init__(self, message, field=None):
        self.field = field
        self.detail = message
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class LengthMismatchError(ValidationError):
    pass


class InsufficientLeadInError(ValidationError):
    pass


class GeometryError(ValidationError):
    pass


class AliasingError(ValidationError):
    pass


class ResourceLimitError(PbrError):
    """A request exceeds a documented size cap."""


class NoDetectionError(PbrError):
    """A search found nothing above its threshold."""
