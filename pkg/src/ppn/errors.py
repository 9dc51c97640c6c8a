"""Shared exception types."""


class PpnError(Exception):
    pass


class FormatError(PpnError):
    """Malformed binary input (bad length, bad magic, truncated payload)."""


class ShapeError(PpnError):
    """Array dimensions inconsistent with what an operation requires."""


class ConfigError(PpnError):
    """Invalid configuration value or combination."""


class DataError(PpnError):
    """A data window or index falls outside the available range."""


class NumericError(PpnError):
    """Non-finite value encountered where finite math is required."""
