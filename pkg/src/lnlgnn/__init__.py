"""Bi-level (local + non-local) attentive node classification.

The pipeline: a self-embedding MLP and a bilinear mutual-information
estimator are trained with multi-stage self-supervised sampling; the
estimated MI weights graph edges for Louvain community detection (local
neighborhoods) and drives a k-means-style clustering of embeddings
(non-local neighborhoods); a two-tower attentive aggregator fuses ego
features with both neighborhood embeddings for classification.
"""

from .graph import Dataset, NeighborhoodMap, Split, load_dataset
from .numerics import ParameterStore, TrainConfig
from .harness import ExperimentConfig, run_baseline, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Split",
    "NeighborhoodMap",
    "load_dataset",
    "ParameterStore",
    "TrainConfig",
    "ExperimentConfig",
    "run_experiment",
    "run_baseline",
    "__version__",
]
