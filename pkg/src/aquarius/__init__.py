"""Passive TCP feature collection with a multi-buffered observation store."""

__version__ = "0.1.0"
