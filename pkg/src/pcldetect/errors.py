"""Shared exception types so callers can tell failure modes apart."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericsError(ValueError):
    """Input values are outside the numeric domain (non-finite, log of <= 0)."""


class GatherError(IndexError):
    """Embedding lookup index is outside the table."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class TapeReuseError(RuntimeError):
    """A gradient tape was asked to run backward a second time."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class ParseError(ValueError):
    """Malformed input file content."""


class StratificationError(ValueError):
    """Stratified splitting is impossible for the given label counts."""


class DegenerateDistributionError(ValueError):
    """A class-ratio computation received a single-class label set."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries diagnostics in the message."""
