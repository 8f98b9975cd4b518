"""Semi-supervised open-set fault diagnosis with Chebyshev graph convolutions."""

__version__ = "0.1.0"
