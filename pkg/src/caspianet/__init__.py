"""Asymmetry-aware channel and spatial attention for 3D segmentation, with a staged noisy-student trainer, on numpy."""

__version__ = "0.1.0"
