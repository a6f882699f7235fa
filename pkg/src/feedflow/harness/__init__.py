"""Experiment harness: configuration, dataset manifests, runners, reports,
and the command-line interface."""

from .config import ExperimentConfig, config_from_dict, config_to_dict, load_config
from .datasets import (
    build_scenarios,
    demo_dataset_path,
    load_dataset,
    load_manifest,
    training_scenarios,
    write_manifest,
)
from .report import ReportRow, aggregate, report_markdown
from .runner import (
    METRICS_COLUMNS,
    ablate,
    controller_config,
    evaluate_policy,
    model_arch,
    new_model,
    train_policy,
)

__all__ = [
    "ExperimentConfig",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "build_scenarios",
    "demo_dataset_path",
    "load_dataset",
    "load_manifest",
    "training_scenarios",
    "write_manifest",
    "ReportRow",
    "aggregate",
    "report_markdown",
    "METRICS_COLUMNS",
    "ablate",
    "controller_config",
    "evaluate_policy",
    "model_arch",
    "new_model",
    "train_policy",
]
