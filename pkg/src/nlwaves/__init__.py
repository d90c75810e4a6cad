"""Traveling waves of nonlocal-dispersal reaction systems and their entropy-based stability checks."""

__version__ = "0.1.0"
