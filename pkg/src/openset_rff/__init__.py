"""Generative outlier augmentation for open-set RF fingerprint authentication."""

__version__ = "0.1.0"
