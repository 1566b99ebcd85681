"""Rotationally invariant cleaning of empirical cross-correlation matrices."""
__version__ = "0.1.0"
