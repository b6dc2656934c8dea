"""Private aid allocation: individual-, unit-level and random targeting."""

__version__ = "0.1.0"
