"""Noisy spirals, a hand-written MLP and the multi-run experiment built on them."""

from .data import SpiralsDataset, gen_spirals, rng_for
from .mlp import MlpConfig, TrainRunOutput, mlp_forward, mlp_train
from .experiment import (DESK, FULL, Experiment, MlpEvaluator, SynthData, make_data,
                         run_ensemble_experiment)
from .raster import render_decision_surface, save_pgm, to_pgm

__all__ = [
    "SpiralsDataset", "gen_spirals", "rng_for", "MlpConfig", "TrainRunOutput", "mlp_forward",
    "mlp_train", "DESK", "FULL", "Experiment", "MlpEvaluator", "SynthData", "make_data",
    "run_ensemble_experiment", "render_decision_surface", "save_pgm", "to_pgm",
]
