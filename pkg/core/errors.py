"""
Exception types for the SPARK recommendation pipeline.

Library code raises these; only the CLI turns them into exit codes.
"""


class SparkError(Exception):
    """Base class for every error raised by the pipeline."""


class DatasetParseError(SparkError, ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, path: str, line_no: int, line: str, reason: str):
        self.path = path
        self.line_no = line_no
        self.line = line
        super().__init__(f"{path}:{line_no}: {reason} ({line!r})")


class EmptyDatasetError(SparkError, ValueError):
    """The interactions file holds no interaction."""


class InfeasibleDensityError(SparkError, ValueError):
    """Requested synthetic density cannot be met without duplicate pairs."""


class ConfigError(SparkError, ValueError):
    """Invalid configuration key or value."""


class SpectralFilterConfigError(ConfigError):
    """beta * sigma_max exceeds the exponential overflow guard."""


class ManifoldDomainError(SparkError, ValueError):
    """A point is off the Lorentz manifold or a vector is not tangent."""


class ShapeMismatchError(SparkError, ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(SparkError, RuntimeError):
    """A loss term or a parameter tensor became NaN/Inf."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        message = f"non-finite value in {name}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class CheckpointError(SparkError, RuntimeError):
    """Checkpoint or cache file is malformed or incompatible."""


class IdOutOfRangeError(SparkError, IndexError):
    """An entity, relation, user or item id exceeds its table."""


class EmptyBatchError(SparkError, ValueError):
    """A loss was asked to reduce over zero examples."""


class EmptyRelevantSetError(SparkError, ValueError):
    """A ranking metric was asked about a user without relevant items."""
