"""Pipeline: configuration, model assembly, training/eval loop, CLI, exports."""

from .config import RunConfig, config_from_sources, parse_ablation
from .metrics import EvalReport, binary_report, linear_probe_accuracy, regression_report
from .model import DhmdModel, ModelSpec, spec_from_dataset, total_loss
from .train import Trainer, TrainingDiverged, evaluate_model, probe_accuracies

__all__ = [
    "RunConfig", "config_from_sources", "parse_ablation",
    "EvalReport", "binary_report", "linear_probe_accuracy", "regression_report",
    "DhmdModel", "ModelSpec", "spec_from_dataset", "total_loss",
    "Trainer", "TrainingDiverged", "evaluate_model", "probe_accuracies",
]
