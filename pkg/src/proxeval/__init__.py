"""Ambient-sensor proximity and relay-attack evaluation toolkit."""

__version__ = "0.1.0"
