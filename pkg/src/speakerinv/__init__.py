"""Model-inversion attacks against a desk-scale speaker recogniser."""

__version__ = "0.1.0"
