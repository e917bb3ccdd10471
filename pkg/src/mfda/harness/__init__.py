"""Experiment orchestration: configuration, persistence and the offline/online pipeline."""

from .config import PRESETS, ExperimentConfig, load_config, preset
from .pipeline import (
    emit_report,
    generate_dataset,
    run_inference,
    synthesize_observations,
    train_surrogates,
)

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "load_config",
    "preset",
    "generate_dataset",
    "train_surrogates",
    "synthesize_observations",
    "run_inference",
    "emit_report",
]
