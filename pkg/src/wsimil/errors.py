"""Exception types shared across the package."""


class WsimilError(Exception):
    """Base class for all package errors."""


class SemanticsError(WsimilError):
    """Raster has the wrong channel semantics for the requested operation."""


class DimensionError(WsimilError):
    """Shapes or sizes do not satisfy an operation's preconditions."""


class FormatError(WsimilError):
    """A binary or text artifact violates its file format."""


class LabelError(WsimilError):
    """Unknown label token or inconsistent label data."""


class ManifestError(WsimilError):
    """Dataset manifest is malformed or references missing files."""


class ConfigError(WsimilError):
    """Training configuration is malformed or contains unknown keys."""


class TrainingError(WsimilError):
    """Training aborted (non-finite loss, empty split, shape mismatch)."""
