"""Figure scripts over merged experiment CSVs."""

__version__ = "0.1.0"
