"""Ending-guided story generation by iterative sentence interpolation."""

__version__ = "0.1.0"
