"""Exception types shared by every claret module.

Each error carries a stable machine-readable ``code`` plus the CLI exit code
of its failure class: 1 = configuration, 2 = I/O or file format,
3 = shape/class mismatch, 4 = verification.
"""

from __future__ import annotations


class ClaRetError(Exception):
    """Base class for all claret errors."""

    code = "CLARET_ERROR"
    exit_code = 1


# -- configuration / argument errors (exit 1) --------------------------------

class ConfigError(ClaRetError):
    code = "BAD_CONFIG"
    exit_code = 1


class BadRange(ConfigError):
    code = "BAD_RANGE"


class NotDecreasing(ConfigError):
    code = "NOT_DECREASING"


class BadRate(ConfigError):
    code = "BAD_RATE"


class BadFractions(ConfigError):
    code = "BAD_FRACTIONS"


class BadSize(ConfigError):
    code = "BAD_SIZE"


class DepthExceeded(ConfigError):
    code = "DEPTH_EXCEEDED"


# -- I/O and file-format errors (exit 2) --------------------------------------

class IoError(ClaRetError):
    code = "IO_ERROR"
    exit_code = 2


class IoWrite(IoError):
    code = "IO_WRITE"


class BadMagic(IoError):
    code = "BAD_MAGIC"


class BadMaxval(IoError):
    code = "BAD_MAXVAL"


class Truncated(IoError):
    code = "TRUNCATED"


class BadVersion(IoError):
    code = "BAD_VERSION"


class CrcMismatch(IoError):
    code = "CRC_MISMATCH"


class NoClasses(IoError):
    code = "NO_CLASSES"


class EmptyClass(IoError):
    code = "EMPTY_CLASS"


class EmptyDataset(IoError):
    code = "EMPTY_DATASET"


# -- shape / class mismatches (exit 3) ----------------------------------------

class ShapeError(ClaRetError):
    code = "SHAPE_ERROR"
    exit_code = 3


class ShapeMismatch(ShapeError):
    code = "SHAPE_MISMATCH"


class ChannelMismatch(ShapeError):
    code = "CHANNEL_MISMATCH"


class LengthMismatch(ShapeError):
    code = "LENGTH_MISMATCH"


class RankExceeded(ShapeError):
    code = "RANK_EXCEEDED"


class SpatialTooSmall(ShapeError):
    code = "SPATIAL_TOO_SMALL"


class InputTooSmall(ShapeError):
    code = "INPUT_TOO_SMALL"


class NotScalar(ShapeError):
    code = "NOT_SCALAR"


class LabelOutOfRange(ShapeError):
    code = "LABEL_OUT_OF_RANGE"


class ClassCountMismatch(ShapeError):
    code = "CLASS_COUNT_MISMATCH"


class NameMismatch(ShapeError):
    code = "NAME_MISMATCH"


# -- verification failures (exit 4) -------------------------------------------

class VerificationError(ClaRetError):
    code = "VERIFICATION_FAILED"
    exit_code = 4


class NonFinite(VerificationError):
    code = "NONFINITE"
