"""
Episodic evaluation harness.

Every runner derives episode i's randomness from (seed, i) alone, so arms
of a comparison replay identical episodes and results do not depend on the
worker count.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import TPVAEConfig
from .data.dataset import EmbeddingDataset
from .data.episodes import (
    EXTREME_NONUNIFORM_PROFILE,
    SLIGHT_NONUNIFORM_PROFILE,
    UNIFORM_PROFILE,
    EpisodeSpec,
    sample_episode,
)
from .errors import SamplingError
from .models.objective import LossWeights
from .solver import SolverConfig, TPVAESolver
from .utils.numerics import RngStream, StreamPurpose

logger = logging.getLogger(__name__)

DEFAULT_TAUS = (5, 10, 25, 35, 50, 75, 100)

ABLATION_ARMS = (
    ("ce", (1.0, 0.0, 0.0, 0.0)),
    ("ce+re", (1.0, 1.0, 1.0, 0.0)),
    ("ce+tp", (1.0, 0.0, 0.0, 1.0)),
    ("ce+tp+re", (1.0, 1.0, 1.0, 1.0)),
)

SCENARIO_PROFILES = (
    ("uniform", UNIFORM_PROFILE),
    ("slight-nonuniform", SLIGHT_NONUNIFORM_PROFILE),
    ("extreme-nonuniform", EXTREME_NONUNIFORM_PROFILE),
)


@dataclass(frozen=True)
class EpisodeRecord:
    """Per-episode row kept for episodes.csv and diagnostics."""

    episode_index: int
    accuracy: float
    iters_run: int
    final_total_loss: float
    marginal_entropy: float
    signature: str


@dataclass
class EvalSummary:
    """
    Aggregate over a batch of episodes.

    Attributes:
        episodes: Number of episodes run
        accuracies: Per-episode accuracy, in episode-index order
        mean: Mean accuracy
        ci95: 1.96 * sample std / sqrt(episodes); 0 for a single episode
        config_echo: Solver config, episode spec and dataset fingerprint
        wall_time_ms: Elapsed wall-clock time
        curve: Running mean accuracy after each episode
        marginal_entropy: Mean entropy of the predicted class histogram
        records: Per-episode rows
    """

    episodes: int
    accuracies: List[float]
    mean: float
    ci95: float
    config_echo: Dict
    wall_time_ms: int
    curve: List[float] = field(default_factory=list)
    marginal_entropy: float = 0.0
    records: List[EpisodeRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict:
        return {
            'episodes': self.episodes,
            'mean_accuracy': self.mean,
            'ci95': self.ci95,
            'marginal_entropy': self.marginal_entropy,
            'wall_time_ms': self.wall_time_ms,
            'config': self.config_echo,
        }


@dataclass
class AblationTable:
    """One EvalSummary per loss configuration, in the fixed arm order."""

    rows: List[Tuple[str, EvalSummary]]

    def __post_init__(self):
        names = tuple(name for name, _ in self.rows)
        expected = tuple(name for name, _ in ABLATION_ARMS)
        if names != expected:
            raise ValueError(f"ablation rows {names} differ from {expected}")

    def as_dict(self) -> Dict[str, EvalSummary]:
        return dict(self.rows)


def ci95(accuracies: Sequence[float]) -> float:
    """Normal-approximation half-width; zero when fewer than two samples."""
    n = len(accuracies)
    if n < 2:
        return 0.0
    return float(1.96 * np.std(accuracies, ddof=1) / math.sqrt(n))


def episode_stream(seed: int, index: int) -> RngStream:
    return RngStream(seed, index)


# Worker-process state, installed once per process by the pool initializer.
_WORKER_DATASET: Optional[EmbeddingDataset] = None


def _install_dataset(ds: EmbeddingDataset) -> None:
    global _WORKER_DATASET
    _WORKER_DATASET = ds


def _solve_one(task: Tuple[EpisodeSpec, SolverConfig, int, int, bool]) -> EpisodeRecord:
    spec, cfg, seed, index, baseline = task
    stream = episode_stream(seed, index)
    try:
        episode = sample_episode(_WORKER_DATASET, spec, stream.child(StreamPurpose.EPISODE))
    except SamplingError as e:
        raise e.with_episode(index) from e
    solver = TPVAESolver(cfg)
    result = solver.baseline(episode) if baseline else solver.run_episode(episode, stream)
    return EpisodeRecord(
        episode_index=index,
        accuracy=result.accuracy,
        iters_run=result.iters_run,
        final_total_loss=result.final_total_loss,
        marginal_entropy=result.marginal_entropy,
        signature=episode.signature(),
    )


def _run_records(
    ds: EmbeddingDataset,
    spec: EpisodeSpec,
    cfg: SolverConfig,
    episodes: int,
    seed: int,
    workers: int,
    baseline: bool,
) -> List[EpisodeRecord]:
    tasks = [(spec, cfg, seed, index, baseline) for index in range(episodes)]
    if workers <= 1 or episodes <= 1:
        _install_dataset(ds)
        return [_solve_one(task) for task in tasks]
    chunksize = max(1, episodes // (workers * 4))
    try:
        with ProcessPoolExecutor(max_workers=workers, initializer=_install_dataset, initargs=(ds,)) as pool:
            return list(pool.map(_solve_one, tasks, chunksize=chunksize))
    except (OSError, BrokenProcessPool) as e:
        logger.warning(f"Worker pool unavailable ({e}); running {episodes} episodes serially")
        _install_dataset(ds)
        return [_solve_one(task) for task in tasks]


def summarize(records: List[EpisodeRecord], config_echo: Dict, wall_time_ms: int) -> EvalSummary:
    accuracies = [r.accuracy for r in records]
    n = len(accuracies)
    running = np.cumsum(accuracies) / np.arange(1, n + 1) if n else np.array([])
    return EvalSummary(
        episodes=n,
        accuracies=accuracies,
        mean=float(np.mean(accuracies)) if n else float("nan"),
        ci95=ci95(accuracies),
        config_echo=config_echo,
        wall_time_ms=wall_time_ms,
        curve=running.tolist(),
        marginal_entropy=float(np.mean([r.marginal_entropy for r in records])) if n else float("nan"),
        records=records,
    )


def evaluate(
    ds: EmbeddingDataset,
    spec: EpisodeSpec,
    cfg: SolverConfig,
    episodes: int,
    seed: int,
    workers: Optional[int] = 1,
    baseline: bool = False,
) -> EvalSummary:
    """
    Run ``episodes`` independent episodes and aggregate their accuracy.

    Args:
        ds: Dataset to sample from
        spec: Episode shape
        cfg: Solver configuration
        episodes: Number of episodes
        seed: Global seed; episode i uses stream (seed, i)
        workers: Process count; None means the configured default
        baseline: Score the unoptimized prototype classifier instead

    Raises:
        SamplingError: with the failing episode index attached
    """
    if episodes <= 0:
        raise ValueError(f"episodes must be positive, got {episodes}")
    workers = TPVAEConfig.resolve_workers(workers)
    started = time.perf_counter()
    records = _run_records(ds, spec, cfg, episodes, seed, workers, baseline)
    wall_ms = int(round((time.perf_counter() - started) * 1000))
    echo = {
        'solver': cfg.to_dict(),
        'spec': spec.to_dict(),
        'dataset_fingerprint': ds.fingerprint(),
        'seed': seed,
        'method': 'baseline' if baseline else 'tpvae',
    }
    summary = summarize(records, echo, wall_ms)
    logger.info(
        f"{echo['method']} {spec.way}-way {spec.shot}-shot q={list(spec.query_counts)}: "
        f"{summary.mean:.4f} +- {summary.ci95:.4f} over {episodes} episodes ({wall_ms} ms)"
    )
    return summary


def compare_baseline(
    ds: EmbeddingDataset,
    spec: EpisodeSpec,
    cfg: SolverConfig,
    episodes: int,
    seed: int,
    workers: Optional[int] = 1,
) -> Tuple[EvalSummary, EvalSummary, float]:
    """Paired baseline and full-solver runs; returns (baseline, tpvae, gap in points)."""
    base = evaluate(ds, spec, cfg, episodes, seed, workers, baseline=True)
    full = evaluate(ds, spec, cfg, episodes, seed, workers)
    gap = 100.0 * (full.mean - base.mean)
    logger.info(f"Transductive gain: {gap:+.2f} points")
    return base, full, gap


def ablate(
    ds: EmbeddingDataset,
    spec: EpisodeSpec,
    cfg: SolverConfig,
    episodes: int,
    seed: int,
    workers: Optional[int] = 1,
) -> AblationTable:
    """
    Evaluate the four loss configurations on the same episodes.

    Logs each arm's mean predicted-marginal entropy, which drops when the
    queries collapse into few classes.
    """
    rows = []
    for name, (w_ce, w_recon, w_lik, w_tp) in ABLATION_ARMS:
        weights = LossWeights(
            w_ce, w_recon, w_lik, w_tp,
            tp_form=cfg.weights.tp_form,
            reduction=cfg.weights.reduction,
        )
        summary = evaluate(ds, spec, cfg.with_updates(weights=weights), episodes, seed, workers)
        logger.info(f"ablation arm {name}: mean {summary.mean:.4f}, marginal entropy {summary.marginal_entropy:.4f}")
        rows.append((name, summary))
    return AblationTable(rows)


def sweep_tau(
    ds: EmbeddingDataset,
    spec: EpisodeSpec,
    cfg: SolverConfig,
    taus: Sequence[float] = DEFAULT_TAUS,
    episodes: int = 1000,
    seed: int = 0,
    workers: Optional[int] = 1,
) -> List[Tuple[float, EvalSummary]]:
    """Evaluate each temperature on the same episodes."""
    if not taus:
        raise ValueError("at least one tau is required")
    if any(not t > 0 for t in taus):
        raise ValueError(f"all taus must be positive, got {list(taus)}")
    rows = []
    for tau in taus:
        summary = evaluate(ds, spec, cfg.with_updates(tau=float(tau)), episodes, seed, workers)
        logger.info(f"tau {tau}: mean {summary.mean:.4f} +- {summary.ci95:.4f}")
        rows.append((float(tau), summary))
    return rows


def scenario_battery(
    ds: EmbeddingDataset,
    cfg: SolverConfig,
    episodes: int,
    seed: int,
    workers: Optional[int] = 1,
    shots: Sequence[int] = (1, 5),
    preprocess: str = "none",
) -> List[Tuple[str, EvalSummary]]:
    """Uniform, slight- and extreme-nonuniform 5-way query profiles at each shot count."""
    rows = []
    for shot in shots:
        for profile_name, profile in SCENARIO_PROFILES:
            spec = EpisodeSpec(len(profile), shot, profile, preprocess)
            name = f"{profile_name}/{shot}-shot"
            summary = evaluate(ds, spec, cfg, episodes, seed, workers)
            logger.info(f"scenario {name}: mean {summary.mean:.4f} +- {summary.ci95:.4f}")
            rows.append((name, summary))
    return rows
