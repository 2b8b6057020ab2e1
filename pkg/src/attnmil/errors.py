"""Exception hierarchy shared across the toolkit.

CLI exit-code mapping: usage errors -> 1, data/format errors -> 2,
numeric/training errors -> 3.
"""


class AttnMilError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(AttnMilError):
    """Array shapes do not match an operation's contract."""


class NumericError(AttnMilError):
    """Non-finite values where finite ones are required."""


class ConfigError(AttnMilError):
    """Invalid hyperparameter or configuration value."""


class DataError(AttnMilError):
    """Bad labels, degenerate bags, impossible splits, missing classes."""


class FormatError(AttnMilError):
    """Malformed serialized container or checkpoint.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(AttnMilError):
    """Training diverged or could not proceed."""
