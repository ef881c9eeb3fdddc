"""Package version, recorded in every result envelope."""

__version__ = "0.4.0"
