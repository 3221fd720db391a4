"""Exception hierarchy shared by every layer of the simulator."""


class PigeonSLError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(PigeonSLError, ValueError):
    """Invalid architecture, sizes or experiment settings."""


class ContractError(PigeonSLError, ValueError):
    """A caller violated an operation's shape or pairing contract."""


class NumericError(PigeonSLError, ArithmeticError):
    """A non-finite value reached the numeric core."""


class DataError(PigeonSLError, ValueError):
    """Sample content is out of range (e.g. a label outside [0, K-1])."""


class IngestionError(DataError):
    """Malformed IDX file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RoundFailure(PigeonSLError):
    """A global round could not produce a usable model."""
