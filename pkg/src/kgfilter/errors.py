"""Exception hierarchy shared by every kgfilter module."""

from __future__ import annotations


class KGFilterError(Exception):
    """Base class for all errors raised by kgfilter."""


class IngestError(KGFilterError):
    """A triple file could not be parsed.

    ``line`` is the 1-based line number of the offending record, or None when
    the problem is not tied to a single line (e.g. an empty file).
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmbeddingError(KGFilterError):
    """An embedding provider failed to produce a vector."""

    retriable = False


class TransportError(EmbeddingError):
    """The remote embedding service was unreachable or answered non-200."""

    retriable = True

    def __init__(self, message: str, status: int | None = None) -> None:
        self.status = status
        super().__init__(message)


class UnknownKeyError(EmbeddingError, KeyError):
    """A precomputed-vector table has no entry for the requested text."""

    def __init__(self, missing: list[str]) -> None:
        self.missing = list(missing)
        shown = ", ".join(repr(m) for m in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"unknown key: {shown}{more}")

    def __str__(self) -> str:  # KeyError would otherwise repr() the message
        return self.args[0]


class SimilarityError(KGFilterError, ValueError):
    """Cosine similarity is undefined for the given vectors."""


class ScoringError(KGFilterError):
    """Scoring a candidate triple failed; carries the offending triple."""

    def __init__(self, message: str, triple=None) -> None:
        self.triple = triple
        super().__init__(message)


class SerializationError(KGFilterError, ValueError):
    """Context or triple text cannot be serialized or parsed unambiguously."""


class PlaceholderError(KGFilterError, KeyError):
    """A prompt template placeholder was left without a value."""

    def __init__(self, placeholder: str) -> None:
        self.placeholder = placeholder
        super().__init__(f"unfilled placeholder {placeholder}")

    def __str__(self) -> str:
        return self.args[0]


class RegionError(KGFilterError, ValueError):
    """Image regions are degenerate, out of bounds, or missing."""


class TrainingDiverged(KGFilterError, ArithmeticError):
    def __init__(self, step: int) -> None:
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


class EvaluationError(KGFilterError, ValueError):
    """Predictions and queries do not line up."""
