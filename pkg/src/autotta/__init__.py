"""Learned test-time augmentation policy search for image retrieval."""

__version__ = "0.1.0"
