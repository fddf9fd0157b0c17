"""Barrier-certificate safety filters for droop-controlled microgrid inverters."""

__version__ = "0.1.0"
