"""
Probabilistic model and objective for TP-VAE Core
"""

from .tpvae import (
    DecoderParams,
    Latents,
    PriorMatrix,
    Prototypes,
    TPVAEState,
    decode,
    init_decoder,
    init_prototypes,
    init_state,
    posterior,
    sample_latents,
    snapshot_prior,
)
from .objective import Gradients, LossBreakdown, LossWeights, grad_total, total_loss

__all__ = [
    "DecoderParams",
    "Latents",
    "PriorMatrix",
    "Prototypes",
    "TPVAEState",
    "decode",
    "init_decoder",
    "init_prototypes",
    "init_state",
    "posterior",
    "sample_latents",
    "snapshot_prior",
    "Gradients",
    "LossBreakdown",
    "LossWeights",
    "grad_total",
    "total_loss",
]
