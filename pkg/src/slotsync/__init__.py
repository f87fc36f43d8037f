"""Sample-accurate TDMA slot alignment, clock synchronization and just-in-time
transmit scheduling for software-defined-radio IoT networks, as a
deterministic discrete-event simulator."""

from slotsync.errors import (
    AxisMismatchError,
    BeforeStreamStartError,
    ClockOverflowError,
    ConfigurationError,
    NotSynchronizedError,
    SlotSyncError,
)

__version__ = "0.1.0"

__all__ = [
    "AxisMismatchError",
    "BeforeStreamStartError",
    "ClockOverflowError",
    "ConfigurationError",
    "NotSynchronizedError",
    "SlotSyncError",
    "__version__",
]
