"""Optimal quoting and last-look rejection control for OTC market making."""

__version__ = "0.1.0"
