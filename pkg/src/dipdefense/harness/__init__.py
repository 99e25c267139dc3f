"""Configuration, dataset ingestion, experiment orchestration, reports and plots."""

from .config import AttackSpec, DatasetConfig, ExperimentConfig, load_experiment_config
from .data import LabeledImage, export_cifar10_samples, load_dataset, write_dataset
from .experiment import EvaluationReport, compute_aggregates, run_experiment, run_sweep
from .plots import emit_curves, emit_defense_visualization
from .report import emit_report, read_report
