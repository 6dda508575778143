"""
Configuration for TP-VAE Core
"""

import os
from typing import Dict

from dotenv import load_dotenv

# Runtime settings may come from a .env file next to the working directory.
load_dotenv(os.getenv('TPVAE_ENV_FILE', '.env'))


class TPVAEConfig:
    """
    Runtime configuration for TP-VAE Core.
    Loads settings from environment variables or uses defaults.

    Solver hyper-parameters are set per run through CLI flags and recorded
    in the run manifest.
    """

    # Logging
    LOG_LEVEL = os.getenv('TPVAE_LOG_LEVEL', 'INFO')
    LOG_FORMAT = os.getenv('TPVAE_LOG_FORMAT', '%(asctime)s %(levelname)s %(name)s: %(message)s')

    # Harness
    WORKERS = int(os.getenv('TPVAE_WORKERS', 0))
    OUTPUT_DIR = os.getenv('TPVAE_OUTPUT_DIR', 'results')

    @classmethod
    def resolve_workers(cls, requested: int = None) -> int:
        """Worker count to use; 0 or None means available parallelism."""
        workers = cls.WORKERS if requested is None else requested
        if workers <= 0:
            workers = os.cpu_count() or 1
        return workers

    @classmethod
    def get_logging_config(cls) -> Dict:
        """Get logging configuration as dictionary."""
        return {
            'level': cls.LOG_LEVEL.upper(),
            'format': cls.LOG_FORMAT,
        }

    @classmethod
    def get_runtime_config(cls) -> Dict:
        """Get harness runtime configuration as dictionary."""
        return {
            'workers': cls.resolve_workers(),
            'output_dir': cls.OUTPUT_DIR,
        }
