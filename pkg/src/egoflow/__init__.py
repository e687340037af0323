"""Ego-view trajectory forecasting: benchmark factory and dual-stream flow model."""

__version__ = "0.1.0"
