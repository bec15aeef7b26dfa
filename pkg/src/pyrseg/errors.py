"""Exception types shared across the package.

The CLI maps these onto exit codes: validation-style failures exit 2,
I/O and parse failures exit 3.
"""


class InvalidArgumentError(ValueError):
    """An operation was called with arguments violating its contract."""


class InvalidStateError(RuntimeError):
    """An object was used before it held the data the operation needs."""


class ValidationError(ValueError):
    """Input data or configuration failed validation."""


class ConfigError(ValidationError):
    """A configuration file or dict is malformed; message names the field."""


class PgmParseError(ValueError):
    """A PGM stream is malformed.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
