"""Adversarially trained anomaly detection on continuous-time dynamic graphs."""

__version__ = "0.1.0"
