"""Desk-scale joint lighting representation toolkit."""

__version__ = "0.1.0"
