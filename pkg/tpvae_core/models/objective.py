"""
TP-VAE objective: support cross-entropy plus the task-prior conditional
ELBO over the query shots, with analytic gradients for psi and theta.

The solver minimizes

    total = w_ce * ce - (w_recon * recon + w_lik * lik + w_tp * tp)

where recon, lik and tp are ELBO terms (larger is better). Additive
constants (encoder entropy, Gaussian normalizers) are dropped.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..data.episodes import Episode
from ..errors import DimensionError, NumericalError
from ..utils.numerics import LOG_EPS, log_softmax, pairwise_sq_dists, safe_log
from .tpvae import DecoderParams, Latents, PriorMatrix, TPVAEState, decode, decoder_hidden

logger = logging.getLogger(__name__)

TP_FORMS = ("jensen_marginal", "literal", "sample")
REDUCTIONS = ("mean", "sum")

PriorLike = Union[PriorMatrix, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    """
    Term weights and variants of the objective.

    Attributes:
        w_ce: Support cross-entropy weight
        w_recon: Reconstruction log-likelihood weight
        w_lik: Class-conditional log-likelihood weight
        w_tp: Task-prior term weight
        tp_form: 'jensen_marginal' (task-level KL), 'literal' (a sum of
            prior-to-posterior ratios inside one log) or 'sample' (per-shot KL)
        reduction: 'mean' divides the query-side terms by the query count,
            'sum' keeps them shot-summed
    """

    w_ce: float = 1.0
    w_recon: float = 1.0
    w_lik: float = 1.0
    w_tp: float = 1.0
    tp_form: str = "jensen_marginal"
    reduction: str = "mean"

    def __post_init__(self):
        weights = (self.w_ce, self.w_recon, self.w_lik, self.w_tp)
        if any(not w >= 0 for w in weights):
            raise ValueError(f"loss weights must be non-negative, got {weights}")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss weight must be positive")
        if self.tp_form not in TP_FORMS:
            raise ValueError(f"unknown tp_form {self.tp_form!r}; expected one of {TP_FORMS}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}; expected one of {REDUCTIONS}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    """Values of each term (after reduction) and the weighted total."""

    ce: float
    recon: float
    lik: float
    tp: float
    total: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Gradients:
    """Gradient of the total loss for every optimized parameter."""

    d_psi: np.ndarray
    d_decoder: DecoderParams

    def as_dict(self) -> Dict[str, np.ndarray]:
        out = {"psi": self.d_psi}
        out.update(self.d_decoder.as_dict())
        return out


def _prior_rows(prior: PriorLike) -> np.ndarray:
    return prior.rows if isinstance(prior, PriorMatrix) else np.asarray(prior, dtype=np.float64)


def _check_shapes(posterior_rows: np.ndarray, prior_rows: np.ndarray) -> None:
    if posterior_rows.shape != prior_rows.shape:
        raise DimensionError(f"posterior {posterior_rows.shape} and prior {prior_rows.shape} differ in shape")


def _scores(z: np.ndarray, state: TPVAEState) -> Tuple[np.ndarray, np.ndarray]:
    """Scores s = -tau * ||z - psi||^2 and their log-softmax."""
    s = -state.prototypes.tau * pairwise_sq_dists(z, state.prototypes.psi)
    try:
        return s, log_softmax(s, axis=1)
    except ValueError as e:
        raise NumericalError(f"posterior scores: {e}", term="scores") from e


def _latents_or_features(episode: Episode, latents: Optional[List[Latents]]) -> List[Latents]:
    if latents is None:
        return [Latents(support=episode.support_features, query=episode.query_features)]
    if not latents:
        raise ValueError("at least one latent set is required")
    return latents


def loss_ce(state: TPVAEState, episode: Episode, latents: Optional[List[Latents]] = None) -> float:
    """
    Support cross-entropy, averaged over Monte Carlo draws and support shots.
    Uses the stored features when no latents are given.
    """
    latents = _latents_or_features(episode, latents)
    labels = episode.support_labels
    total = 0.0
    for lat in latents:
        _, logp = _scores(lat.support, state)
        total += -np.mean(np.maximum(logp[np.arange(len(labels)), labels], np.log(LOG_EPS)))
    return float(total / len(latents))


def loss_recon(state: TPVAEState, latents: List[Latents], episode: Episode) -> float:
    """Sum over query shots of -1/2 ||q_i - decode(z_i)||^2, averaged over draws."""
    latents = _latents_or_features(episode, latents)
    total = 0.0
    for lat in latents:
        resid = episode.query_features - decode(state.decoder, lat.query)
        total += -0.5 * np.sum(resid * resid)
    return float(total / len(latents))


def loss_lik(state: TPVAEState, latents: List[Latents], episode: Episode) -> float:
    """Posterior-weighted class log-likelihood sum_i sum_k p_ik * (-tau ||z_i - psi_k||^2)."""
    latents = _latents_or_features(episode, latents)
    total = 0.0
    for lat in latents:
        s, logp = _scores(lat.query, state)
        total += np.sum(np.exp(logp) * s)
    return float(total / len(latents))


def loss_sample_kl(posterior_rows: np.ndarray, prior: PriorLike) -> float:
    """Sample-level term sum_i sum_k p_ik log(prior_ik / p_ik) = -sum_i KL(p_i || prior_i)."""
    p = np.asarray(posterior_rows, dtype=np.float64)
    pi = _prior_rows(prior)
    _check_shapes(p, pi)
    return float(np.sum(p * (safe_log(pi) - safe_log(p))))


def loss_tp(posterior_rows: np.ndarray, prior: PriorLike, form: str = "jensen_marginal") -> float:
    """
    Task-prior term.

    With W_k = sum_i p_ik and P_k = sum_i prior_ik:
      jensen_marginal: sum_k W_k log(P_k / W_k)
      literal:         sum_k W_k log(sum_i prior_ik / p_ik)
      sample:          loss_sample_kl
    """
    p = np.asarray(posterior_rows, dtype=np.float64)
    pi = _prior_rows(prior)
    _check_shapes(p, pi)
    if form == "jensen_marginal":
        W = p.sum(axis=0)
        P = pi.sum(axis=0)
        return float(np.sum(W * (safe_log(P) - safe_log(W))))
    if form == "literal":
        W = p.sum(axis=0)
        R = np.sum(pi / np.maximum(p, LOG_EPS), axis=0)
        return float(np.sum(W * safe_log(R)))
    if form == "sample":
        return loss_sample_kl(p, pi)
    raise ValueError(f"unknown tp_form {form!r}; expected one of {TP_FORMS}")


def _tp_grad_wrt_p(p: np.ndarray, pi: np.ndarray, form: str) -> np.ndarray:
    """d loss_tp / d p_ik for every query i and class k."""
    if form == "jensen_marginal":
        W = p.sum(axis=0)
        g = safe_log(pi.sum(axis=0)) - safe_log(W) - (W > LOG_EPS)
        return np.broadcast_to(g, p.shape)
    if form == "literal":
        W = p.sum(axis=0)
        pc = np.maximum(p, LOG_EPS)
        R = np.sum(pi / pc, axis=0)
        dR = -pi / (pc * pc) * (p > LOG_EPS)
        inv_R = np.where(R > LOG_EPS, 1.0 / np.maximum(R, LOG_EPS), 0.0)
        return safe_log(R)[None, :] + (W * inv_R)[None, :] * dR
    if form == "sample":
        return safe_log(pi) - safe_log(p) - (p > LOG_EPS)
    raise ValueError(f"unknown tp_form {form!r}; expected one of {TP_FORMS}")


def _scores_to_psi(g: np.ndarray, z: np.ndarray, psi: np.ndarray, tau: float) -> np.ndarray:
    """Chain rule from d/ds_ik to d/dpsi_k, using ds_ik/dpsi_k = 2 tau (z_i - psi_k)."""
    return 2.0 * tau * (g.T @ z - g.sum(axis=0)[:, None] * psi)


def _softmax_backward(p: np.ndarray, g_p: np.ndarray) -> np.ndarray:
    """Map d/dp to d/ds through a row-wise softmax."""
    return p * (g_p - np.sum(p * g_p, axis=1, keepdims=True))


def _require_finite(value, term: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value in {term} term", term=term)


def _evaluate(
    state: TPVAEState,
    episode: Episode,
    weights: LossWeights,
    latents: Optional[List[Latents]],
    need_grad: bool,
) -> Tuple[LossBreakdown, Optional[Gradients]]:
    latents = _latents_or_features(episode, latents)
    L = len(latents)
    tau = state.prototypes.tau
    psi = state.prototypes.psi
    theta = state.decoder
    pi = state.prior.rows
    labels = episode.support_labels
    q_obs = episode.query_features
    n_support = len(labels)
    n_query = q_obs.shape[0]
    if pi.shape != (n_query, psi.shape[0]):
        raise DimensionError(f"prior has shape {pi.shape}, episode needs {(n_query, psi.shape[0])}")
    scale = 1.0 / n_query if weights.reduction == "mean" else 1.0

    ce = recon = lik = tp = 0.0
    d_psi = np.zeros_like(psi)
    d_dec = {name: np.zeros_like(arr) for name, arr in theta.as_dict().items()}
    onehot = np.eye(psi.shape[0])[labels]

    for lat in latents:
        # support cross-entropy
        _, logp_s = _scores(lat.support, state)
        ce += -np.mean(np.maximum(logp_s[np.arange(n_support), labels], np.log(LOG_EPS))) / L
        if need_grad and weights.w_ce > 0:
            g_s = (np.exp(logp_s) - onehot) * (weights.w_ce / (L * n_support))
            step = _scores_to_psi(g_s, lat.support, psi, tau)
            _require_finite(step, "ce")
            d_psi += step

        # query posterior shared by the class-likelihood and task-prior terms
        s_q, logp_q = _scores(lat.query, state)
        p_q = np.exp(logp_q)
        lik += np.sum(p_q * s_q) / L
        tp += loss_tp(p_q, pi, weights.tp_form) / L
        if need_grad and (weights.w_lik > 0 or weights.w_tp > 0):
            g_q = np.zeros_like(s_q)
            if weights.w_lik > 0:
                s_bar = np.sum(p_q * s_q, axis=1, keepdims=True)
                g_q -= (weights.w_lik * scale / L) * p_q * (1.0 + s_q - s_bar)
            if weights.w_tp > 0:
                g_tp = _softmax_backward(p_q, _tp_grad_wrt_p(p_q, pi, weights.tp_form))
                _require_finite(g_tp, "tp")
                g_q -= (weights.w_tp * scale / L) * g_tp
            step = _scores_to_psi(g_q, lat.query, psi, tau)
            _require_finite(step, "lik" if weights.w_tp == 0 else "lik/tp")
            d_psi += step

        # reconstruction of the stored query features
        hidden = decoder_hidden(theta, lat.query)
        resid = hidden @ theta.W2.T + theta.b2 - q_obs
        recon += -0.5 * np.sum(resid * resid) / L
        if need_grad and weights.w_recon > 0:
            c = weights.w_recon * scale / L
            d_dec["W2"] += c * resid.T @ hidden
            d_dec["b2"] += c * resid.sum(axis=0)
            d_pre = c * (resid @ theta.W2) * (1.0 - hidden * hidden)
            d_dec["W1"] += d_pre.T @ lat.query
            d_dec["b1"] += d_pre.sum(axis=0)
            for name, arr in d_dec.items():
                _require_finite(arr, "recon")

    recon, lik, tp = recon * scale, lik * scale, tp * scale
    for name, value in (("ce", ce), ("recon", recon), ("lik", lik), ("tp", tp)):
        _require_finite(value, name)
    total = weights.w_ce * ce - (weights.w_recon * recon + weights.w_lik * lik + weights.w_tp * tp)
    breakdown = LossBreakdown(ce=float(ce), recon=float(recon), lik=float(lik), tp=float(tp), total=float(total))
    if not need_grad:
        return breakdown, None
    return breakdown, Gradients(d_psi=d_psi, d_decoder=DecoderParams(**d_dec))


def total_loss(
    state: TPVAEState,
    episode: Episode,
    weights: LossWeights,
    latents: Optional[List[Latents]] = None,
) -> LossBreakdown:
    """All loss components and the weighted total."""
    return _evaluate(state, episode, weights, latents, need_grad=False)[0]


def grad_total(
    state: TPVAEState,
    episode: Episode,
    weights: LossWeights,
    latents: Optional[List[Latents]] = None,
) -> Gradients:
    """
    Analytic gradient of the total loss with respect to psi and theta.

    Differentiates through every appearance of psi, including the posterior
    weights. Terms with zero weight contribute exactly zero.

    Raises:
        NumericalError: naming the term that produced a non-finite value
    """
    return _evaluate(state, episode, weights, latents, need_grad=True)[1]


def value_and_grad(
    state: TPVAEState,
    episode: Episode,
    weights: LossWeights,
    latents: Optional[List[Latents]] = None,
) -> Tuple[LossBreakdown, Gradients]:
    """total_loss and grad_total from one pass."""
    return _evaluate(state, episode, weights, latents, need_grad=True)
