"""Exception types raised across the package."""


class ReLearnerError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(ReLearnerError, ValueError):
    pass


class PreconditionError(ReLearnerError, ValueError):
    pass


class NotPositiveDefinite(ReLearnerError, ValueError):
    pass


class DegenerateDegree(ReLearnerError, ValueError):
    pass


class AllFiltered(ReLearnerError, ValueError):
    pass


class MissingAltitude(ReLearnerError, ValueError):
    pass


class IndexOverlap(ReLearnerError, ValueError):
    pass


class PartitionInvalid(ReLearnerError, ValueError):
    pass


class SpecExceedsNodes(ReLearnerError, ValueError):
    pass


class SegmentTooShort(ReLearnerError, ValueError):
    pass


class NonFiniteGradient(ReLearnerError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter block {name!r}")
        self.name = name


class Truncated(ReLearnerError, RuntimeWarning):
    """Neumann series hit ``k_max`` before the requested tolerance.

    Carries the number of terms used and the max-abs size of the last term.
    It is warning-grade: the partial sum is still returned to the caller.
    """

    def __init__(self, terms, last_term_norm):
        super().__init__(
            f"Neumann series truncated after {terms} terms "
            f"(last term max-abs {last_term_norm:.3e})"
        )
        self.terms = terms
        self.last_term_norm = last_term_norm


class AllMasked(ReLearnerError, ValueError):
    pass


class DegenerateSequence(ReLearnerError, ValueError):
    pass


class FormatError(ReLearnerError, ValueError):
    pass
