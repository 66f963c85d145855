"""Synthetic head-rotation trace generation: preprocessing, a numpy TimeGAN,
a spectral baseline and distribution metrics."""

__version__ = "0.1.0"
