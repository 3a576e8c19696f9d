"""Event-camera flare simulation, fusion, coding and evaluation toolkit."""

from .errors import ConfigError, DataError, EvflareError
from .events import EventStream, read_events, write_events

__all__ = ["ConfigError", "DataError", "EvflareError", "EventStream", "read_events", "write_events"]
__version__ = "0.1.0"
