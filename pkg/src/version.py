"""Tool version, embedded in every output file."""

__version__ = "0.1.0"
