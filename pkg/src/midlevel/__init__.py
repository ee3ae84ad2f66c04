"""Desk-scale reproduction of mid-level feature transfer for navigation."""

__version__ = "0.1.0"
