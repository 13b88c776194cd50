"""Joint time-series/text model with per-step document attention."""

__version__ = "0.1.0"
