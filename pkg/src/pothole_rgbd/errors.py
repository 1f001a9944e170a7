"""Exception hierarchy shared by all modules."""


class PotholeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PotholeError, ValueError):
    """Input has the wrong shape, range or contents."""


class ConfigurationError(ValidationError):
    """A configuration value is outside its allowed range."""


class UnsupportedOperationError(PotholeError, NotImplementedError):
    """The requested operation is not available for this block."""


class NoGroundPlaneError(PotholeError):
    """No valid depth pixel is left outside the pothole masks."""


class NoDepthError(PotholeError):
    """A pothole mask covers no valid depth pixel."""

    def __init__(self, message, mask_index=None):
        super().__init__(message)
        self.mask_index = mask_index


class LabelParseError(ValidationError):
    def __init__(self, message, line_number=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_number is not None:
            where += f"{line_number}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line_number = line_number
        self.path = path


class DepthFileError(PotholeError, OSError):
    """A depth image could not be read or has the wrong format."""


class ManifestError(PotholeError):
    """A manifest or one of its records is invalid."""
