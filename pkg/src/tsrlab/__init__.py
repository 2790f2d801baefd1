"""Table-structure-recognition architecture lab."""

__version__ = "0.1.0"
