"""Homeostatic learning-rate regulation for online classifiers under concept shift."""

__version__ = "0.1.0"
