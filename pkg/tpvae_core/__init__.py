"""
TP-VAE Core: transductive few-shot inference in embedding space.
Refines class prototypes on each episode's unlabeled queries under a
frozen task prior.
"""

__version__ = "0.1.0"

from .solver import EpisodeResult, SolverConfig, TPVAESolver, run_episode
from .harness import EvalSummary, ablate, compare_baseline, evaluate, scenario_battery, sweep_tau

__all__ = [
    "EpisodeResult",
    "SolverConfig",
    "TPVAESolver",
    "run_episode",
    "EvalSummary",
    "ablate",
    "compare_baseline",
    "evaluate",
    "scenario_battery",
    "sweep_tau",
]
