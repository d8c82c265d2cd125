"""Surrogate connectivity analysis for bridge networks under earthquake scenarios."""

__version__ = "0.1.0"
