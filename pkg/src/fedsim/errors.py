"""Exception taxonomy shared by all fedsim modules.

Exit-code mapping for the CLI lives in fedsim.cli; library code only raises.
"""


class FedsimError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(FedsimError, ValueError):
    """A caller passed a value that violates an operation's precondition."""


class InvalidStateError(FedsimError, RuntimeError):
    """An operation was invoked on an object whose state cannot support it."""


class ProtocolError(FedsimError):
    """A message or update set violates the client/server exchange contract."""


class DecodeError(ProtocolError):
    """A byte stream could not be decoded; the message names the failed field."""


class ConfigError(FedsimError, ValueError):
    """An experiment configuration failed validation."""


class NumericError(FedsimError, ArithmeticError):
    """A non-finite value appeared mid-run; carries round context when known."""
