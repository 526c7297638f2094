"""Grounded instruction-following agents in procedural grid worlds."""

__version__ = "0.1.0"
