"""Exception hierarchy shared across the engine.

Every error carries a short machine-parsable ``category`` string which the
CLI prints as ``error: <category>: <message>`` before exiting nonzero.
"""


class VitgradeError(Exception):
    """Base class for all engine errors."""

    category = "engine"


class ConfigError(VitgradeError):
    category = "config"


class ShapeError(VitgradeError):
    """Array shape does not match the model configuration."""

    category = "model/shape"


class LabelError(VitgradeError):
    """Grading level outside the valid 1..num_classes range."""

    category = "data/label"


class ManifestError(VitgradeError):
    category = "data/manifest"


class ManifestNotFoundError(ManifestError):
    category = "data/manifest-missing"


class ImageFormatError(VitgradeError):
    category = "data/image"


class CheckpointError(VitgradeError):
    category = "ckpt/format"


class BadMagicError(CheckpointError):
    category = "ckpt/bad-magic"


class TruncatedPayloadError(CheckpointError):
    category = "ckpt/truncated"


class OverlappingTensorsError(CheckpointError):
    category = "ckpt/overlap"


class DuplicateNameError(CheckpointError):
    category = "ckpt/duplicate-name"


class HeaderError(CheckpointError):
    category = "ckpt/header"


class NameValidationError(VitgradeError):
    """Checkpoint parameter names do not match the model configuration."""

    category = "ckpt/names"


class NonFiniteError(VitgradeError):
    """A gradient or loss became NaN/Inf; the run must abort."""

    category = "train/non-finite"
