"""Distortion-robust distillation bench for self-supervised speech encoders."""

__version__ = "0.3.0"
