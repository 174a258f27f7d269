"""Exception types shared across the engine."""

from __future__ import annotations


class UnweaverError(Exception):
    """Base class for all engine errors."""


class EmptyDocument(UnweaverError):
    """Document (or corpus) has no usable text."""


class BackendError(UnweaverError):
    """A model backend call failed after bounded retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MalformedOutput(UnweaverError):
    """Structured model output could not be parsed."""


class DimensionMismatch(UnweaverError):
    """Vector or matrix dimensions disagree with the configured layout."""


class ChunkIdOutOfRange(UnweaverError):
    """A mention references a chunk id outside the corpus range."""


class IndexEmpty(UnweaverError):
    """Index build produced zero equivalence classes."""


class IoError(UnweaverError):
    """Index file could not be read or written."""


class SchemaVersionMismatch(UnweaverError):
    """Index file was written with an unsupported schema version."""


class SingularSystem(UnweaverError):
    """A linear system is singular (or numerically rank-deficient)."""


class NonConvergence(UnweaverError):
    """Iterative solver stopped without meeting its tolerance.

    The utility solver normally reports this condition via
    ``AlignmentSolution.status == "max_iter"`` instead of raising; the
    exception type exists for callers that need a hard failure.
    """

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution
