"""Deterministic lab bench for relay capacity measurement."""

__version__ = "0.1.0"
