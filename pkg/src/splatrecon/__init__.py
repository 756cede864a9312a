"""Geometric core for monocular clothed-human reconstruction from Gaussian avatars."""

__version__ = "0.1.0"
