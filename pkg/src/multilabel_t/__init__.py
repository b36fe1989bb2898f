"""Transition-matrix estimation for multi-label learning with noisy labels."""

from .datagen import (
    MultiLabelDataset,
    NoiseConfig,
    TransitionMatrix2,
    generate_clean_dataset,
    inject_class_dependent_noise,
    inject_pairwise_noise,
    make_noise_matrices,
)
from .estimator import EstimationReport, estimate_all, solve_bilinear
from .evaluate import classification_metrics, estimation_error, run_sweep
from .pipeline import ExperimentConfig, load_config, run_experiment, with_overrides

__version__ = "0.1.0"

__all__ = [
    "MultiLabelDataset", "NoiseConfig", "TransitionMatrix2", "generate_clean_dataset",
    "inject_class_dependent_noise", "inject_pairwise_noise", "make_noise_matrices",
    "EstimationReport", "estimate_all", "solve_bilinear", "classification_metrics",
    "estimation_error", "run_sweep", "ExperimentConfig", "load_config", "run_experiment",
    "with_overrides",
]
