"""Offline feature extraction for the gameon fusion engine."""

__version__ = "0.1.0"
