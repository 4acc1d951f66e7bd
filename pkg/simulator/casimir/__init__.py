"""Trapped-ion simulator of photon production in a moving-mirror cavity."""

__version__ = "0.3.0"
