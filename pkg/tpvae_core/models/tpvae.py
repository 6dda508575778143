"""
TP-VAE model state: the prototype classifier, the embedding-space decoder,
and the frozen task prior, together with the probabilistic maps between them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..data.episodes import Episode
from ..errors import DimensionError
from ..utils.numerics import RngStream, check_prob_rows, gaussian_sample, log_softmax, pairwise_sq_dists

logger = logging.getLogger(__name__)

DEFAULT_TAU = 25.0
DEFAULT_SIGMA_ENC = 0.1


@dataclass(frozen=True, eq=False)
class Prototypes:
    """
    Prototype classifier.

    Attributes:
        psi: (N, d) prototype rows, one per class
        tau: Temperature, the inverse variance of each class Gaussian
    """

    psi: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        psi = np.array(self.psi, dtype=np.float64)
        if psi.ndim != 2 or psi.shape[0] < 2:
            raise DimensionError(f"prototypes need shape (N >= 2, d), got {psi.shape}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "psi", psi)

    @property
    def way(self) -> int:
        return self.psi.shape[0]

    @property
    def dim(self) -> int:
        return self.psi.shape[1]

    def with_psi(self, psi: np.ndarray) -> "Prototypes":
        return Prototypes(psi, self.tau)


@dataclass(frozen=True, eq=False)
class DecoderParams:
    """
    One-hidden-layer tanh decoder: mu = W2 tanh(W1 z + b1) + b2.
    Output variance is fixed to 1.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        for name in self.NAMES:
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.ndim != 2 or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise DimensionError(
                f"inconsistent decoder shapes: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}, b2 {self.b2.shape}"
            )
        for name in self.NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"decoder parameter {name} has non-finite entries")

    @property
    def d_latent(self) -> int:
        return self.W1.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def d_obs(self) -> int:
        return self.W2.shape[0]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def zeros_like(cls, other: "DecoderParams") -> "DecoderParams":
        return cls(**{name: np.zeros_like(arr) for name, arr in other.as_dict().items()})


@dataclass(frozen=True, eq=False)
class PriorMatrix:
    """Per-query class distribution from the untrained classifier; read-only."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimensionError(f"prior must be (N_q, N), got {rows.shape}")
        check_prob_rows(rows, name="prior rows")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    def marginals(self) -> np.ndarray:
        """Column sums P_k, the prior's expected query count per class."""
        return self.rows.sum(axis=0)


@dataclass(frozen=True, eq=False)
class Latents:
    """One Monte Carlo draw of latent codes for every support and query shot."""

    support: np.ndarray = field(repr=False)
    query: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class TPVAEState:
    """
    Everything the per-episode optimization updates or reads.

    Attributes:
        prototypes: Classifier psi and temperature
        decoder: Decoder parameters theta
        prior: Frozen task prior
        sigma_enc: Standard deviation of the encoder sampling noise
        L: Monte Carlo samples per iteration
    """

    prototypes: Prototypes
    decoder: DecoderParams
    prior: PriorMatrix
    sigma_enc: float = DEFAULT_SIGMA_ENC
    L: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if not self.sigma_enc >= 0:
            raise ValueError(f"sigma_enc must be non-negative, got {self.sigma_enc}")

    def with_params(self, psi: np.ndarray, decoder: DecoderParams) -> "TPVAEState":
        return TPVAEState(self.prototypes.with_psi(psi), decoder, self.prior, self.sigma_enc, self.L)


def init_prototypes(episode: Episode, tau: float = DEFAULT_TAU) -> Prototypes:
    """
    Initialize each prototype as the mean of its class's support features.

    Raises:
        ValueError: if some class has no support shot
    """
    way = episode.way
    counts = np.bincount(episode.support_labels, minlength=way)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} have no support shots")
    psi = np.zeros((way, episode.dim))
    for k in range(way):
        psi[k] = episode.support_features[episode.support_labels == k].mean(axis=0)
    return Prototypes(psi, tau)


def log_posterior(z: np.ndarray, protos: Prototypes) -> np.ndarray:
    """Row-wise log p(y = k | z) for a single vector (d,) or a batch (n, d)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    points = np.atleast_2d(z)
    if points.shape[1] != protos.dim:
        raise DimensionError(f"latent has d={points.shape[1]}, prototypes have d={protos.dim}")
    scores = -protos.tau * pairwise_sq_dists(points, protos.psi)
    out = log_softmax(scores, axis=1)
    return out[0] if single else out


def posterior(z: np.ndarray, protos: Prototypes) -> np.ndarray:
    """
    Prototype nearest-neighbor posterior: softmax over -tau * ||z - psi_k||^2.

    Returns a probability row for a single vector, or one row per input row.
    """
    return np.exp(log_posterior(z, protos))


def predict(z: np.ndarray, protos: Prototypes) -> np.ndarray:
    """Argmax class per row; np.argmax breaks ties toward the lowest index."""
    return np.argmax(log_posterior(np.atleast_2d(z), protos), axis=1)


def snapshot_prior(episode: Episode, protos_init: Prototypes) -> PriorMatrix:
    """Classify the deterministic query embeddings once and freeze the result."""
    return PriorMatrix(posterior(episode.query_features, protos_init))


def init_decoder(d_obs: int, d_hidden: int, d_latent: int, rng: RngStream) -> DecoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if min(d_obs, d_hidden, d_latent) <= 0:
        raise ValueError(f"decoder dimensions must be positive, got ({d_obs}, {d_hidden}, {d_latent})")
    bound1 = 1.0 / math.sqrt(d_latent)
    bound2 = 1.0 / math.sqrt(d_hidden)
    return DecoderParams(
        W1=rng.uniform(-bound1, bound1, (d_hidden, d_latent)),
        b1=np.zeros(d_hidden),
        W2=rng.uniform(-bound2, bound2, (d_obs, d_hidden)),
        b2=np.zeros(d_obs),
    )


def decoder_hidden(theta: DecoderParams, z: np.ndarray) -> np.ndarray:
    """tanh(W1 z + b1) row-wise."""
    return np.tanh(z @ theta.W1.T + theta.b1)


def decode(theta: DecoderParams, z: np.ndarray) -> np.ndarray:
    """
    Decoder mean for a latent vector (d_latent,) or a batch (n, d_latent).

    Raises:
        DimensionError: if z does not have length d_latent
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != theta.d_latent:
        raise DimensionError(f"latent has length {z.shape[-1]}, decoder expects {theta.d_latent}")
    return decoder_hidden(theta, z) @ theta.W2.T + theta.b2


def sample_latents(episode: Episode, sigma_enc: float, L: int, rng: Optional[RngStream]) -> List[Latents]:
    """
    Draw L latent sets z = e + sigma_enc * eps around the stored features.

    sigma_enc == 0 returns the features themselves and needs no stream.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if sigma_enc > 0 and rng is None:
        raise ValueError("a random stream is required when sigma_enc > 0")
    return [
        Latents(
            support=gaussian_sample(episode.support_features, sigma_enc, rng),
            query=gaussian_sample(episode.query_features, sigma_enc, rng),
        )
        for _ in range(L)
    ]


def init_state(
    episode: Episode,
    rng: RngStream,
    tau: float = DEFAULT_TAU,
    sigma_enc: float = DEFAULT_SIGMA_ENC,
    L: int = 1,
    d_hidden: Optional[int] = None,
) -> TPVAEState:
    """
    Initialization block of the algorithm: random decoder, support-mean
    prototypes, and the prior frozen from those prototypes.
    """
    protos = init_prototypes(episode, tau)
    d = episode.dim
    decoder = init_decoder(d_obs=d, d_hidden=d_hidden or d, d_latent=d, rng=rng)
    prior = snapshot_prior(episode, protos)
    return TPVAEState(protos, decoder, prior, sigma_enc, L)
