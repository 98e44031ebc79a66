"""Exception hierarchy; each class carries the process exit code it maps to."""
from typing import Optional


class BlockGraphError(Exception):
    """Root of every error the toolkit raises on purpose."""
    exit_code = 1


class ConfigError(BlockGraphError):
    """Invalid or inconsistent configuration."""
    exit_code = 1


class TransportError(BlockGraphError):
    """The block source could not be reached or answered with a server error."""
    exit_code = 2


class NotFoundError(BlockGraphError):
    """The requested block, transaction or node does not exist."""
    exit_code = 2


class ParseError(BlockGraphError):
    """Malformed block document.

    Attributes:
        offset: Byte offset of the problem within the document, when known
    """
    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class ValuePrecisionError(ParseError):
    """A decimal amount has more than 8 fractional digits."""


class SequencingError(BlockGraphError):
    """Blocks arrived out of order or a height is missing."""
    exit_code = 3


class MissingBlockError(SequencingError):
    """A height inside the requested range could not be fetched."""


class InvariantViolationError(BlockGraphError):
    """Chain data or written output breaks a rule that must always hold."""
    exit_code = 4


class CorruptionError(InvariantViolationError):
    """A written file no longer matches its manifest digest."""


class ValueSplitError(BlockGraphError):
    """An edge value could not be computed (zero denominator, negative residual)."""
    exit_code = 4


class DegenerateTransactionError(ValueSplitError):
    """The transfer denominator of a transaction is zero or negative."""
