"""Exception hierarchy for molview."""


class MolviewError(Exception):
    """Base class for every error raised by molview."""


class ShapeError(MolviewError):
    """Shape, dimension or index mismatch."""


class DomainError(MolviewError):
    """Input outside the mathematical domain of an operation."""


class NonFiniteError(MolviewError):
    """A forward value became NaN or infinite."""


class GradientError(MolviewError):
    """Backward pass could not produce valid gradients."""


class RecordError(MolviewError):
    """A dataset record failed validation."""

    def __init__(self, message: str, record_id: str | None = None, line: int | None = None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if record_id is not None:
            prefix.append(f"record {record_id!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)
        self.detail = message
        self.record_id = record_id
        self.line = line


class ConfigError(MolviewError):
    """Invalid configuration value, unknown key or unreadable config file."""


class CheckpointError(MolviewError):
    """Checkpoint file is truncated, corrupted or of another format version."""
