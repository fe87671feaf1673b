"""Exception types shared across the toolkit.

Plain ``ValueError`` is raised for malformed arguments (bad shapes, out of
range parameters); the classes below mark conditions that callers may want
to handle specifically.
"""


class DegenerateInputError(ValueError):
    """Input is structurally valid but statistically degenerate.

    Examples: a constant image where a variance is needed, a projection
    correlation sample whose conditional variance vanishes, an all-black
    image pair in an SDC check.
    """


class DegenerateRegionError(DegenerateInputError):
    """A metric region has zero variance, zero mean, or zero maximum."""


class DegeneratePairError(DegenerateInputError):
    """A cycle-loss pair has a near-zero log denominator."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class CorruptedStackError(ValueError):
    """A sub-image stack's position map is not a bijection onto the source."""


class NumericOverflowError(FloatingPointError):
    """A network activation or loss became non-finite."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch: int, message: str):
        super().__init__(message)
        self.epoch = epoch


class FormatVersionError(ValueError):
    """A serialized file has an unknown magic or unsupported version."""
