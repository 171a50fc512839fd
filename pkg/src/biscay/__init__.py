"""Trace-driven simulation of radio-KPI-driven congestion control."""

__version__ = "0.1.0"
