"""Adaptively weighted regional time-series extraction and evaluation."""

__version__ = "0.1.0"
