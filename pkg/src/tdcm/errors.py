"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class ToolError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class ConfigError(ToolError):
    """Invalid configuration, flags or argument combinations."""

    exit_code = 1


class DataError(ToolError):
    """Problems with input data: parsing, shapes, ranges, degeneracy."""

    exit_code = 2


class NumericalError(ToolError):
    """A computation failed or produced an unusable result."""

    exit_code = 3
