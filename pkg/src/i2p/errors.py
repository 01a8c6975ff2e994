"""Exception types shared across the library.

The CLI maps these onto stable exit codes: config/input problems exit 2,
numeric aborts exit 3.
"""


class I2PError(Exception):
    """Base class for all library errors."""


class InputError(I2PError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class ShapeError(I2PError, ValueError):
    """Array extents are inconsistent with an operation's contract."""


class ContractError(I2PError, ValueError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class FormatError(I2PError, ValueError):
    """A file does not follow its declared binary or text format."""


class ConfigError(I2PError, ValueError):
    """A configuration is invalid or inconsistent with a checkpoint."""


class NumericsError(I2PError, RuntimeError):
    """A computation produced NaN/Inf where finite values are required."""
