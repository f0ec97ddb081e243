"""Deontic governance engine for agent communities."""

__version__ = "0.1.0"
