"""Unsupervised spatio-temporal zoning of tiled image sequences."""

__version__ = "0.1.0"
