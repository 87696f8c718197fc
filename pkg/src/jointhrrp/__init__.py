"""Composite-jamming HRRP synthesis and joint decouple/recognize modeling."""

__version__ = "0.1.0"
