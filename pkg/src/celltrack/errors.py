class CellTrackError(Exception):
    """Base class for package errors."""


class MaskFormatError(CellTrackError, ValueError):
    """A mask file or grid could not be parsed or failed validation."""


class ConfigError(CellTrackError, ValueError):
    pass


class NoOverlapError(CellTrackError):
    """No candidate placement overlaps any available father."""


class InvariantError(CellTrackError, RuntimeError):
    """An internal consistency check failed (a bug, not bad input)."""
