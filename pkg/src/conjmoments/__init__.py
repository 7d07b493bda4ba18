"""Semi-analytical collision probability from propagated moments."""

__version__ = "0.1.0"
