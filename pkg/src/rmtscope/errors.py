"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class FormatError(ToolkitError):
    """A file does not conform to one of the documented binary formats."""


class NumericsError(ToolkitError):
    """A numerical routine received invalid data or failed to converge."""
