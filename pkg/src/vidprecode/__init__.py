"""Downsampling-based video precoding toolkit.

A rate-guided arbitrary rescaling network precodes video for standard
encoders; a differentiable virtual codec stands in for the encoder during
training; codec drivers, quality metrics and Bjontegaard deltas close the
evaluation loop.
"""

__version__ = "0.1.0"
