"""Concept-drift detectors and a benchmark harness for leak detection in water-network pressure streams."""

from .core import DAY, WEEK, LabeledScore, LeakScenario, SensorStream, WdnGraph, Window, slice, week_count

__version__ = "0.1.0"

__all__ = [
    "DAY",
    "WEEK",
    "LabeledScore",
    "LeakScenario",
    "SensorStream",
    "WdnGraph",
    "Window",
    "slice",
    "week_count",
]
