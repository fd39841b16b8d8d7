"""Post-hoc transforms (temperature scaling, ensembling, weight averaging),
post-hoc reversal detection and post-hoc checkpoint selection."""

__version__ = "0.1.0"

from .errors import FormatError, PosthocError, TrainingError, ValidationError
from .store import (CheckpointTensors, EvalTable, RunStore, load_store, read_checkpoint,
                    read_eval_table, save_store, write_checkpoint, write_eval_table)
from .metrics import (MetricValue, error_metric, loss_metric, perplexity_metric, softmax_row,
                      subset_metrics)
from .calibrate import FitOptions, TemperatureFit, apply_temperature, fit_temperature
from .transforms import (SwaState, TransformSpec, compose_swa_ens_ts, compose_swa_ts,
                         ensemble_logits, swa_mean, swa_update)
from .diagnostics import (CurvePair, ReversalReport, base_curve, detect_reversal, flip_rate,
                          posthoc_curve, temperature_trajectory)
from .selection import (MonitorState, SelectionReport, hybrid_select, monitor_step,
                        naive_select, posthoc_select_swa_ens_ts, posthoc_select_swa_ts)

__all__ = [
    "FormatError", "PosthocError", "TrainingError", "ValidationError", "CheckpointTensors",
    "EvalTable", "RunStore", "load_store", "read_checkpoint", "read_eval_table", "save_store",
    "write_checkpoint", "write_eval_table", "MetricValue", "error_metric", "loss_metric",
    "perplexity_metric", "softmax_row", "subset_metrics", "FitOptions", "TemperatureFit",
    "apply_temperature", "fit_temperature", "SwaState", "TransformSpec", "compose_swa_ens_ts",
    "compose_swa_ts", "ensemble_logits", "swa_mean", "swa_update", "CurvePair",
    "ReversalReport", "base_curve", "detect_reversal", "flip_rate", "posthoc_curve",
    "temperature_trajectory", "MonitorState", "SelectionReport", "hybrid_select",
    "monitor_step", "naive_select", "posthoc_select_swa_ens_ts", "posthoc_select_swa_ts",
]
