"""Exception hierarchy shared by every capmatch layer.

Exit-code mapping used by the CLI: usage/config problems are exit 1,
data/archive problems are exit 2, internal invariant failures are exit 3.
"""


class CapmatchError(Exception):
    """Base class for all capmatch errors."""


# --- configuration / usage -------------------------------------------------

class InvalidConfig(CapmatchError):
    """A configuration value violates its documented constraints."""


class ConfigInvalid(InvalidConfig):
    """Alias kept for the trainer's contract wording."""


# --- numerical kernels -----------------------------------------------------

class ZeroNormRow(CapmatchError):
    """A row that must be normalized has (near-)zero Euclidean norm."""


class DetachedLoss(CapmatchError):
    """backward() was asked about a loss the tape never recorded."""


class DoubleBackward(CapmatchError):
    """backward() was called twice on the same tape without reset."""


class DimensionMismatch(CapmatchError):
    """Operands disagree on a shared dimension."""


class ShapeMismatch(CapmatchError):
    """Declared and actual tensor extents disagree."""


class NonFiniteValue(CapmatchError):
    """A NaN or Inf appeared where only finite values are allowed."""


# --- archive / storage -----------------------------------------------------

class ArchiveIoError(CapmatchError):
    """Underlying file I/O failed while reading or writing an archive."""


class InvariantViolation(CapmatchError):
    """An in-memory archive breaks its own invariants."""


class BadMagic(CapmatchError):
    """The manifest does not carry the expected format magic."""


class VersionMismatch(CapmatchError):
    """The on-disk format or checkpoint version is not supported."""


# --- dataset semantics -----------------------------------------------------

class SplitMisuse(CapmatchError):
    """A train-only operation was invoked on a non-train split."""


class ArchiveMismatch(CapmatchError):
    """Derived data (e.g. filtered captions) does not belong to this archive."""


class NoCaptions(CapmatchError):
    """A caption-dependent operation received a video with zero captions."""


class SequenceTooLong(CapmatchError):
    """A token sequence exceeds the configured maximum length."""


# --- losses / evaluation ---------------------------------------------------

class NonSquare(CapmatchError):
    """A contrastive loss needs a square similarity matrix."""


class NonPositiveTemperature(CapmatchError):
    """Softmax temperature must be strictly positive."""


class EmptyCorpus(CapmatchError):
    """Retrieval was attempted against an empty candidate set."""
