"""Analytical model of a many-tile narrow-SIMD deep learning accelerator."""

__version__ = "0.1.0"
