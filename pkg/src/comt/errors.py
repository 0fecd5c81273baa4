"""Exception types shared across the package."""


class ComtError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(ComtError):
    """Array shapes are inconsistent with the federation layout."""


class LabelDomainError(ComtError):
    """Classification labels are not encoded as -1/+1."""


class EmptyTrustedSet(ComtError):
    """An agent has no trusted instances."""


class InvalidArgument(ComtError, ValueError):
    """An argument lies outside its documented domain."""


class InsufficientData(ComtError):
    """Not enough data to build the requested split or fit."""


class DomainError(ComtError):
    """A dual variable left its admissible domain."""


class DegenerateState(ComtError):
    """Dual state carries no usable information (e.g. all-zero alpha)."""


class DegenerateInput(ComtError):
    """Metric input is degenerate (constant targets or single-class labels)."""


class NonFiniteIterate(ComtError):
    """A solver step produced non-finite values despite step-size reduction."""


class ParseError(ComtError):
    """A data file could not be parsed."""
