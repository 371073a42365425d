"""Experiment harness: configuration, pipelines, sweeps and file output."""

from .config import ConfigError, RunConfig, load_config
from .io import read_pgm, render_latent_pgm
from .runner import run
from .sweeps import ablate_masactrl, ablate_recon, ablate_threshold, prox_table, run_sweep

__all__ = [
    "ConfigError", "RunConfig", "load_config", "render_latent_pgm", "read_pgm", "run",
    "run_sweep", "ablate_threshold", "ablate_recon", "ablate_masactrl", "prox_table",
]
