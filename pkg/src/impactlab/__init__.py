"""Tabular testbed for low-impact agents: baselines, impact measures and regularized planning."""

__version__ = "0.1.0"
