"""Latent graph inference with several model spaces fused by attention."""

from .config import RunConfig, load_config, parse_config
from .data import Dataset, load_citation, load_tabular, synth_sphere_communities, synth_tree
from .gnn import build_model
from .trainer import run_cross_validation

__all__ = [
    "Dataset",
    "RunConfig",
    "build_model",
    "load_citation",
    "load_config",
    "load_tabular",
    "parse_config",
    "run_cross_validation",
    "synth_sphere_communities",
    "synth_tree",
]
__version__ = "0.1.0"
