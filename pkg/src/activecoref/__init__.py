"""Active learning for incremental span clustering."""

__version__ = "0.1.0"
