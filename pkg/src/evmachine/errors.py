"""Exception hierarchy.

Every error raised by the library derives from :class:`EVMError`, which is
itself a :class:`ValueError` so callers that only care about bad input can
catch the builtin.
"""


class EVMError(ValueError):
    """Base class for all library errors."""


class InvalidParameter(EVMError):
    """A domain type was constructed with a violated invariant."""


class DimensionMismatch(EVMError):
    pass


class ZeroVector(EVMError):
    """Cosine distance is undefined for the zero vector."""


class EmptyNegatives(EVMError):
    pass


class TooFewSamples(EVMError):
    pass


class DegenerateTail(EVMError):
    """All tail values are identical, so the shape MLE diverges."""

    def __init__(self, value: float):
        super().__init__(f"degenerate tail: every value equals {value!r}")
        self.value = value


class NonPositiveValue(EVMError):
    pass


class LengthMismatch(EVMError):
    pass


class UncoverableUniverse(EVMError):
    pass


class BudgetZero(EVMError):
    pass


class SingleClassDataset(EVMError):
    pass


class UnknownClassId(EVMError):
    pass


class InvalidOpenness(EVMError):
    pass


class EmptyInput(EVMError):
    pass


class CountMismatch(EVMError):
    pass


class InsufficientClasses(EVMError):
    pass


class FitError(EVMError):
    """A Weibull fit failed for a specific training point."""


# file-format errors

class RaggedRows(EVMError):
    pass


class NonNumericFeature(EVMError):
    pass


class EmptyFile(EVMError):
    pass


class NonAscendingIndices(EVMError):
    pass


class MalformedEntry(EVMError):
    pass


class BadMagic(EVMError):
    pass


class VersionUnsupported(EVMError):
    pass


class TruncatedFile(EVMError):
    pass


class ZeroMarginWarning(UserWarning):
    """Zero-valued margins were clamped to a small epsilon before fitting."""
