"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """Invalid configuration value or structure."""


class LayoutError(ConfigError):
    """Sensor layout or relation rule refers to an unknown position."""


class GraphBuildError(ConfigError):
    """Graph construction produced a structure violating its invariants."""


class CheckpointError(ValueError):
    """Checkpoint contents do not match the model definition."""


class SchemaError(ValueError):
    """Ingested file does not match the documented schema."""


class InvalidDistributionError(ValueError):
    """A tensor expected to hold probability rows fails validation."""


class ProtocolError(ValueError):
    """Experiment protocol preconditions are not met."""


class TrainingAborted(RuntimeError):
    """Training stopped because a loss term became non-finite."""

    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term '{term}'")
        self.term = term
