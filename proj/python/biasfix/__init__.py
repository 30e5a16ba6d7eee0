"""Bias-conflicting sample detection and counterweight fine-tuning.

Thin wrapper over the compiled ``_core`` module: synthetic biased data
generation, MLP training (CE / GCE), influence-based scoring, pivotal set
construction, and counterweight fine-tuning.
"""

from ._core import (
    ConfigError,
    Dataset,
    FormatError,
    GenConfig,
    MissingArtifactError,
    Mlp,
    NumericalError,
    PivotalSet,
    accuracy,
    bcsi_scores,
    build_pivotal,
    detection_precision,
    evaluate,
    finetune,
    generate_synthetic,
    generate_unbiased_test,
    load_checkpoint,
    load_dataset,
    load_idx_with_color_bias,
    save_checkpoint,
    save_dataset,
    si_scores,
    train_mlp,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "FormatError",
    "GenConfig",
    "MissingArtifactError",
    "Mlp",
    "NumericalError",
    "PivotalSet",
    "accuracy",
    "bcsi_scores",
    "build_pivotal",
    "detection_precision",
    "evaluate",
    "finetune",
    "generate_synthetic",
    "generate_unbiased_test",
    "load_checkpoint",
    "load_dataset",
    "load_idx_with_color_bias",
    "save_checkpoint",
    "save_dataset",
    "si_scores",
    "train_mlp",
]

__version__ = "0.1.0"
