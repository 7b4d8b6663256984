"""Exception types shared across the toolkit."""


class SeqtagError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SeqtagError):
    """Operand shapes do not conform for a tensor operation."""


class ConfigError(SeqtagError):
    """A configuration value violates a documented constraint."""


class ContractError(SeqtagError):
    """A caller violated a documented precondition."""


class ParseError(SeqtagError):
    """A data file could not be parsed; the message carries the line number."""


class CheckpointError(SeqtagError):
    """A checkpoint archive is corrupt, truncated, or of an unsupported version."""


class TrainingError(SeqtagError):
    """Training aborted, e.g. on a non-finite loss."""
