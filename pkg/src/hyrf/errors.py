"""Exception hierarchy shared by every hyrf module."""


class HyrfError(Exception):
    """Base class for all hyrf errors."""


class InvalidInputError(HyrfError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(HyrfError):
    """Inconsistent configuration, e.g. a camera outside the background sphere."""


class ContractViolation(HyrfError, RuntimeError):
    """A backward pass was called without a matching forward cache."""


class CorruptStreamError(HyrfError):
    """A binary stream (checkpoint, bundle, bitstream) failed to decode.

    ``offset`` is the byte offset at which decoding gave up, when known.
    """

    def __init__(self, message, offset=None):
        self.reason = message
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(HyrfError):
    """Dataset files are missing or malformed."""


class DivergenceError(HyrfError, FloatingPointError):
    """Training produced a non-finite loss."""


class TrainingError(HyrfError):
    """Training reached an unrecoverable state (e.g. every Gaussian pruned)."""
