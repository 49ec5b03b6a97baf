"""Exception hierarchy shared across the package."""


class LesionCnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(LesionCnnError, ValueError):
    """An array argument has an incompatible shape."""


class DataError(LesionCnnError):
    """A dataset, image file, or metadata file is invalid."""


class MetadataError(DataError):
    """A metadata CSV row could not be parsed or validated."""


class CheckpointError(LesionCnnError):
    """A checkpoint file is malformed, truncated, or inconsistent."""


class NumericsError(LesionCnnError):
    """A numeric operation produced or received non-finite values."""


class TrainingDiverged(NumericsError):
    """Training hit a non-finite loss; carries the failing coordinates."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ClassMismatchError(LesionCnnError):
    """Model and data disagree on the number or identity of classes."""
