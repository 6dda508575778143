"""
Data Module for TP-VAE Core
Embedding datasets, their file formats, and episode sampling.
"""

from .dataset import EmbeddingDataset, SynthSpec, gen_synthetic, load_dataset, save_dataset
from .episodes import Episode, EpisodeSpec, make_episode, preprocess, sample_episode

__all__ = [
    "EmbeddingDataset",
    "SynthSpec",
    "gen_synthetic",
    "load_dataset",
    "save_dataset",
    "Episode",
    "EpisodeSpec",
    "make_episode",
    "preprocess",
    "sample_episode",
]
