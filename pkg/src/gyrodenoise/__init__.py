"""Gyroscope denoising with a dilated causal CNN and open-loop attitude
estimation on SO(3)."""

__version__ = "0.1.0"
