"""Exact and approximate mode search for sequence models."""

__version__ = "0.1.0"
