"""Exception hierarchy shared by all slotsync modules."""

from __future__ import annotations


class SlotSyncError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SlotSyncError):
    """A scenario or model parameter is inconsistent or out of range."""


class ClockOverflowError(ConfigurationError):
    """Time arithmetic left the signed 64-bit tick range."""


class AxisMismatchError(SlotSyncError, TypeError):
    """Two instants on different clock axes were combined without conversion."""


class BeforeStreamStartError(SlotSyncError, ValueError):
    """A radio time precedes the first sample of the receive stream."""


class NotSynchronizedError(SlotSyncError):
    """The device has no beacon anchor or no clock-offset estimate yet."""
