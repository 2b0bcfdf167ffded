"""Induced-map tools for polynomial mixing of intermittent maps."""
__version__ = "0.1.0"
