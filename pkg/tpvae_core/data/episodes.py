"""
Episode construction: N-way K-shot tasks with per-class query counts,
plus the feature preprocessing applied inside an episode.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from ..errors import SamplingError
from ..utils.numerics import RngStream
from .dataset import EmbeddingDataset

logger = logging.getLogger(__name__)

PREPROCESS_MODES = ("none", "l2", "center_l2")

# Query profiles used by the nonuniform scenarios
UNIFORM_PROFILE = (15, 15, 15, 15, 15)
SLIGHT_NONUNIFORM_PROFILE = (20, 20, 10, 10, 15)
EXTREME_NONUNIFORM_PROFILE = (19, 19, 18, 18, 1)


@dataclass(frozen=True)
class EpisodeSpec:
    """
    Shape of an N-way K-shot task.

    Attributes:
        way: Number of classes N
        shot: Support shots per class K
        query_counts: Query shots per class, one entry per class
        preprocess: 'none', 'l2' or 'center_l2'
    """

    way: int
    shot: int
    query_counts: Tuple[int, ...]
    preprocess: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "query_counts", tuple(int(q) for q in self.query_counts))
        if self.way <= 0:
            raise ValueError(f"way must be positive, got {self.way}")
        if self.shot <= 0:
            raise ValueError(f"shot must be positive, got {self.shot}")
        if len(self.query_counts) != self.way:
            raise ValueError(f"query_counts has {len(self.query_counts)} entries, expected {self.way}")
        if any(q < 0 for q in self.query_counts):
            raise ValueError("query counts must be non-negative")
        if not any(q > 0 for q in self.query_counts):
            raise ValueError("at least one class needs a query shot")
        if self.preprocess not in PREPROCESS_MODES:
            raise ValueError(f"unknown preprocess mode {self.preprocess!r}; expected one of {PREPROCESS_MODES}")

    @classmethod
    def uniform(cls, way: int = 5, shot: int = 1, queries: int = 15, preprocess: str = "none") -> "EpisodeSpec":
        return cls(way, shot, (queries,) * way, preprocess)

    @property
    def total_queries(self) -> int:
        return sum(self.query_counts)

    def to_dict(self) -> dict:
        return {
            'way': self.way,
            'shot': self.shot,
            'query_counts': list(self.query_counts),
            'preprocess': self.preprocess,
        }


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Episode:
    """
    One sampled task.

    Support rows come grouped by class (K per class, label order 0..N-1),
    followed in ``query_*`` by each class's query shots. Labels are episode
    indices 0..N-1; ``class_ids[n]`` is the dataset class behind label n.
    ``query_labels`` are for scoring only.
    """

    spec: EpisodeSpec
    class_ids: Tuple[int, ...]
    support_features: np.ndarray = field(repr=False)
    support_labels: np.ndarray = field(repr=False)
    query_features: np.ndarray = field(repr=False)
    query_labels: np.ndarray = field(repr=False)
    support_rows: Tuple[Tuple[int, int], ...] = field(repr=False, default=())
    query_rows: Tuple[Tuple[int, int], ...] = field(repr=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "support_features", _frozen(np.asarray(self.support_features, dtype=np.float64)))
        object.__setattr__(self, "query_features", _frozen(np.asarray(self.query_features, dtype=np.float64)))
        object.__setattr__(self, "support_labels", _frozen(np.asarray(self.support_labels, dtype=np.int64)))
        object.__setattr__(self, "query_labels", _frozen(np.asarray(self.query_labels, dtype=np.int64)))
        if self.support_features.shape[0] != self.spec.way * self.spec.shot:
            raise ValueError("support size does not match way * shot")
        counts = np.bincount(self.support_labels, minlength=self.spec.way)
        if np.any(counts != self.spec.shot):
            raise ValueError(f"support shots per class {counts.tolist()} differ from shot {self.spec.shot}")
        q_counts = np.bincount(self.query_labels, minlength=self.spec.way)[: self.spec.way]
        if tuple(int(c) for c in q_counts) != self.spec.query_counts or len(self.query_labels) != self.spec.total_queries:
            raise ValueError(f"query counts {q_counts.tolist()} differ from spec {list(self.spec.query_counts)}")

    @property
    def way(self) -> int:
        return self.spec.way

    @property
    def dim(self) -> int:
        return self.support_features.shape[1]

    @property
    def num_query(self) -> int:
        return self.query_features.shape[0]

    def signature(self) -> str:
        """Hash of the sampled classes and rows; equal for replayed episodes."""
        digest = hashlib.sha256()
        digest.update(repr((self.class_ids, self.support_rows, self.query_rows)).encode())
        return digest.hexdigest()


def preprocess(features: np.ndarray, mode: str) -> np.ndarray:
    """
    Normalize a stack of episode features.

    Args:
        features: (n, d) matrix holding support and query features of one episode
        mode: 'none' (identity), 'l2' (unit norm per row, zero rows untouched)
            or 'center_l2' (subtract the mean of these rows, then l2)
    """
    if mode not in PREPROCESS_MODES:
        raise ValueError(f"unknown preprocess mode {mode!r}; expected one of {PREPROCESS_MODES}")
    features = np.asarray(features, dtype=np.float64)
    if mode == "none":
        return features.copy()
    if mode == "center_l2":
        features = features - features.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return features / safe


def sample_episode(ds: EmbeddingDataset, spec: EpisodeSpec, rng: RngStream) -> Episode:
    """
    Draw one episode: N classes without replacement, then K + q_n rows per
    class without replacement; the first K rows of each class are support.

    Raises:
        SamplingError: if the dataset has fewer than N classes or a sampled
            class cannot supply K + q_n rows
    """
    if ds.num_classes < spec.way:
        raise SamplingError(f"dataset has {ds.num_classes} classes, episode needs {spec.way}")

    picks = rng.choice(ds.num_classes, spec.way)
    class_ids = []
    support_x, support_y, query_x, query_y = [], [], [], []
    support_rows, query_rows = [], []
    for label, position in enumerate(picks):
        class_id = ds.class_ids[int(position)]
        block = ds.features[int(position)]
        need = spec.shot + spec.query_counts[label]
        if block.shape[0] < need:
            raise SamplingError(
                f"class {class_id} has {block.shape[0]} vectors, episode needs {need}",
                class_id=class_id,
            )
        rows = rng.choice(block.shape[0], need)
        class_ids.append(class_id)
        support_x.append(block[rows[: spec.shot]])
        query_x.append(block[rows[spec.shot:]])
        support_y.extend([label] * spec.shot)
        query_y.extend([label] * spec.query_counts[label])
        support_rows.extend((class_id, int(r)) for r in rows[: spec.shot])
        query_rows.extend((class_id, int(r)) for r in rows[spec.shot:])

    support = np.vstack(support_x)
    query = np.vstack(query_x)
    if spec.preprocess != "none":
        stacked = preprocess(np.vstack([support, query]), spec.preprocess)
        support, query = stacked[: support.shape[0]], stacked[support.shape[0]:]

    return Episode(
        spec=spec,
        class_ids=tuple(class_ids),
        support_features=support,
        support_labels=np.array(support_y),
        query_features=query,
        query_labels=np.array(query_y),
        support_rows=tuple(support_rows),
        query_rows=tuple(query_rows),
    )


def make_episode(
    support: Sequence[Sequence[float]],
    support_labels: Sequence[int],
    query: Sequence[Sequence[float]],
    query_labels: Sequence[int],
) -> Episode:
    """Build an episode from explicit arrays (handcrafted cases, tests, notebooks)."""
    support_labels = np.asarray(support_labels, dtype=np.int64)
    query_labels = np.asarray(query_labels, dtype=np.int64)
    way = int(max(support_labels.max(), query_labels.max() if query_labels.size else 0)) + 1
    shot = int(np.bincount(support_labels, minlength=way)[0])
    q_counts = tuple(int(c) for c in np.bincount(query_labels, minlength=way))
    spec = EpisodeSpec(way, shot, q_counts)
    order_s = np.argsort(support_labels, kind="stable")
    order_q = np.argsort(query_labels, kind="stable")
    return Episode(
        spec=spec,
        class_ids=tuple(range(way)),
        support_features=np.asarray(support, dtype=np.float64)[order_s],
        support_labels=support_labels[order_s],
        query_features=np.asarray(query, dtype=np.float64)[order_q],
        query_labels=query_labels[order_q],
    )
