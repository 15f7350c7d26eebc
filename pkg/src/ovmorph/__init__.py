"""Morphometry, stain normalization and random-forest pipeline for H&E patches."""

__version__ = "0.1.0"
