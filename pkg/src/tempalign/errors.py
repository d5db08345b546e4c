"""Exception hierarchy shared by all tempalign modules.

Every library-raised error derives from :class:`TempalignError` so callers
can catch one base class.  The CLI maps subclasses onto exit codes: data
and format problems exit 2, numeric failures exit 3.
"""


class TempalignError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(TempalignError):
    """Operands disagree on a feature dimension or array shape."""


class DuplicateId(TempalignError):
    """Two records in one store share an id."""


class IoError(TempalignError):
    """Underlying file read/write failed."""


class FormatError(TempalignError):
    """A file does not conform to its declared on-disk format."""


class DataError(TempalignError):
    """Values are invalid (non-finite, wrong count) despite a valid container."""


class MissingRecord(TempalignError):
    """A manifest references an id absent from its store."""


class ModalityMismatch(TempalignError):
    """A record has the wrong modality for its role in a pair."""


class SequenceTooShort(TempalignError):
    """Sequence too short for the configured framing (kernel or stride floors to 0)."""


class KernelExceedsLength(TempalignError):
    """Computed kernel size is larger than the sequence itself."""


class ParamMismatch(TempalignError):
    """Framing parameters were computed for a different sequence length."""


class DegenerateInput(TempalignError):
    """Input is degenerate for the requested operation (e.g. zero text vector)."""


class EmptyBatch(TempalignError):
    """A batch operation received no items."""


class InvalidK(TempalignError):
    """A recall cutoff k is not a positive integer."""


class DivergenceError(TempalignError):
    """Training produced a non-finite loss."""


class ConfigError(TempalignError):
    """A config file or flag combination is invalid."""
