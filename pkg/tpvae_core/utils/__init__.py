"""
Utility functions for TP-VAE Core
"""

from .numerics import (
    RngStream,
    StreamPurpose,
    finite_diff_grad,
    gaussian_sample,
    log_softmax,
    softmax,
    sq_dist,
)

__all__ = [
    "RngStream",
    "StreamPurpose",
    "finite_diff_grad",
    "gaussian_sample",
    "log_softmax",
    "softmax",
    "sq_dist",
]
