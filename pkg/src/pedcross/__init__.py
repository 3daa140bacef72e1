"""Pedestrian crossing-action anticipation: crops, models, training, explainability."""

__version__ = "0.1.0"
