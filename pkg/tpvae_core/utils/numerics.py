"""
Numerics: dense-vector primitives, stable probability transforms,
reproducible random streams and a finite-difference gradient oracle.

All core math runs in float64.
"""

import enum
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DimensionError, OracleError

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
LOG_EPS = 1e-12

ArrayLike = Union[np.ndarray, Sequence[float]]


class StreamPurpose(enum.IntEnum):
    """Purpose tags keying sub-streams of an episode stream."""

    EPISODE = 1
    DECODER = 2
    LATENTS = 3
    SYNTHETIC = 4


class RngStream:
    """
    Counter-based random stream keyed by (seed, stream_id, purpose path).

    Backed by numpy's Philox generator seeded through a SeedSequence whose
    spawn key carries the stream id and purpose tags, so the numbers an
    episode sees depend only on its key, never on scheduling order.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.path = tuple(int(tag) & MASK64 for tag in path)
        sequence = np.random.SeedSequence(
            entropy=self.seed,
            spawn_key=(self.stream_id,) + self.path,
        )
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, purpose: int) -> "RngStream":
        """Derive an independent sub-stream for one purpose."""
        return RngStream(self.seed, self.stream_id, self.path + (int(purpose),))

    def standard_normal(self, shape) -> np.ndarray:
        return self._generator.standard_normal(shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._generator.uniform(low, high, shape)

    def choice(self, n: int, size: int) -> np.ndarray:
        """Draw ``size`` distinct indices from range(n), in draw order."""
        return self._generator.choice(n, size=size, replace=False)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def as_vec64(values: ArrayLike, name: str = "vector") -> np.ndarray:
    """
    Convert input to a finite float64 array.

    Raises:
        DimensionError: if the array is empty
        ValueError: if any entry is NaN or infinite
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def log_softmax(scores: ArrayLike, axis: int = -1) -> np.ndarray:
    """
    Log-probabilities of a softmax, computed with max subtraction.

    Works row-wise on 2-D input along ``axis``.

    Raises:
        DimensionError: on empty input
        ValueError: if any score is NaN or infinite
    """
    s = as_vec64(scores, "scores")
    if s.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty score vector")
    shifted = s - np.max(s, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(scores: ArrayLike, axis: int = -1) -> np.ndarray:
    """Probabilities of a softmax; see log_softmax."""
    return np.exp(log_softmax(scores, axis=axis))


def safe_log(x: ArrayLike) -> np.ndarray:
    """Natural log with arguments floored at LOG_EPS."""
    return np.log(np.maximum(np.asarray(x, dtype=np.float64), LOG_EPS))


def sq_dist(a: ArrayLike, b: ArrayLike) -> float:
    """
    Squared Euclidean distance between two vectors.

    Raises:
        DimensionError: if lengths differ or a vector is empty
        ValueError: if any entry is NaN or infinite
    """
    a = as_vec64(a, "a")
    b = as_vec64(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"sq_dist shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sum(diff * diff))


def pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """
    Squared distances between every row of ``points`` (n, d) and every row
    of ``centers`` (k, d), shape (n, k).

    Differences are formed explicitly instead of through the
    ||a||^2 - 2ab + ||b||^2 expansion so results are exact to rounding.
    """
    points = np.atleast_2d(points)
    centers = np.atleast_2d(centers)
    if points.shape[1] != centers.shape[1]:
        raise DimensionError(
            f"dimension mismatch: points have d={points.shape[1]}, centers have d={centers.shape[1]}"
        )
    diff = points[:, None, :] - centers[None, :, :]
    return np.sum(diff * diff, axis=2)


def gaussian_sample(mean: ArrayLike, sigma: float, rng: RngStream) -> np.ndarray:
    """
    Draw mean + sigma * eps with eps standard normal per coordinate.

    sigma == 0 returns an exact copy of ``mean`` and consumes no randomness.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    mean = np.asarray(mean, dtype=np.float64)
    if sigma == 0:
        return mean.copy()
    return mean + sigma * rng.standard_normal(mean.shape)


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: ArrayLike,
    h: float = 1e-5,
) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    ``x`` may have any shape; the result has the same shape.

    Raises:
        ValueError: if h is not positive
        OracleError: if any evaluation of f is non-finite
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = f(x)
        flat[i] = original - h
        f_minus = f(x)
        flat[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite function value around coordinate {i}", term="oracle")
        grad_flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest |a - n| / max(1, |a|) over all coordinates."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_prob_rows(rows: np.ndarray, tol: float = 1e-9, name: str = "probability rows") -> None:
    """
    Validate that every row is a probability vector.

    Raises:
        ValueError: on negative entries or rows not summing to 1 within tol
    """
    rows = np.atleast_2d(rows)
    if np.any(rows < 0):
        raise ValueError(f"{name} contain negative entries")
    worst = float(np.max(np.abs(rows.sum(axis=1) - 1.0))) if rows.size else 0.0
    if worst > tol:
        raise ValueError(f"{name} do not sum to 1 (worst deviation {worst:.3e})")


def entropy(probs: ArrayLike, base: Optional[float] = None) -> float:
    """Shannon entropy of a probability vector; zero entries contribute 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    h = float(-np.sum(nz * np.log(nz)))
    if base is not None:
        h /= np.log(base)
    return h
