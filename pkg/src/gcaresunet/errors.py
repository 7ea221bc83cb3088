"""Exception hierarchy shared by every module."""


class GCAResUNetError(Exception):
    """Base class for all package errors."""


class ConfigError(GCAResUNetError, ValueError):
    pass


class ShapeError(GCAResUNetError, ValueError):
    pass


class InputError(GCAResUNetError, ValueError):
    pass


class NumericError(GCAResUNetError, ArithmeticError):
    pass


class StateError(GCAResUNetError, RuntimeError):
    pass


class CheckpointError(GCAResUNetError):
    """Checkpoint could not be loaded. ``code`` identifies the failure class."""

    code = "checkpoint"


class ChecksumError(CheckpointError):
    code = "checksum"


class VersionError(CheckpointError):
    code = "version"


class DigestMismatchError(CheckpointError):
    code = "digest"


class CheckpointFormatError(CheckpointError):
    code = "format"


class DatasetError(GCAResUNetError):
    code = "dataset"


class DatasetDigestError(DatasetError):
    code = "digest"


class MissingFileError(DatasetError, FileNotFoundError):
    code = "missing"


class LabelRangeError(DatasetError):
    code = "label"
