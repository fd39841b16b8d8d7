"""Multi-run spirals experiment that fills a :class:`RunStore`."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..store import CheckpointTensors, RunStore, format_index, load_checkpoint, save_checkpoint, save_eval_table
from .data import SpiralsDataset, gen_spirals
from .mlp import MlpConfig, TrainRunOutput, eval_tables, mlp_train

log = logging.getLogger(__name__)

FULL = MlpConfig(depth=4, hidden=512)
DESK = MlpConfig(depth=4, hidden=128)


@dataclass(frozen=True)
class SynthData:
    train: SpiralsDataset
    val: SpiralsDataset
    test: SpiralsDataset

    def eval_sets(self) -> dict[str, SpiralsDataset]:
        return {"val": self.val, "test": self.test}


def make_data(seed: int, n_train: int = 1000, n_eval: int = 500,
              noise_rate: float = 0.2) -> SynthData:
    """Training set plus i.i.d. noisy validation and test sets."""
    return SynthData(gen_spirals(n_train, noise_rate, seed, purpose="train"),
                     gen_spirals(n_eval, noise_rate, seed, purpose="val"),
                     gen_spirals(n_eval, noise_rate, seed, purpose="test"))


class MlpEvaluator:
    """Store-level evaluator running the MLP on fixed evaluation sets."""

    def __init__(self, eval_sets: dict[str, SpiralsDataset], dtype: str = "float64"):
        self.eval_sets = dict(eval_sets)
        self.dtype = dtype

    def __call__(self, run, index, ckpt: CheckpointTensors):
        return eval_tables(ckpt, self.eval_sets, self.dtype)

    def evaluate(self, ckpt: CheckpointTensors):
        return eval_tables(ckpt, self.eval_sets, self.dtype)


@dataclass
class Experiment:
    store: RunStore
    data: SynthData
    config: MlpConfig
    runs: dict[int, TrainRunOutput]

    def evaluator(self) -> MlpEvaluator:
        ev = getattr(self, "_evaluator", None)
        if ev is None:
            ev = self._evaluator = MlpEvaluator(self.data.eval_sets(), self.config.dtype)
        return ev


def run_ensemble_experiment(n_models: int, data: SynthData, cfg: MlpConfig,
                            out_dir=None) -> Experiment:
    """Train ``n_models`` MLPs (distinct init, batches and subsample per run).

    When ``out_dir`` is given, checkpoints and eval bundles are written there
    as they are produced and the store keeps only lazy checkpoint handles.
    """
    if n_models < 2:
        raise ValidationError(f"an ensemble experiment needs >= 2 models, got {n_models}")
    root = Path(out_dir) if out_dir is not None else None
    store = RunStore()
    outputs = {}
    for run in range(1, n_models + 1):
        sink = None
        if root is not None:
            run_dir = root / f"run-{run}"
            run_dir.mkdir(parents=True, exist_ok=True)
            sink = _disk_sink(run_dir)
        out = mlp_train(data.train, cfg, run, data.eval_sets(), sink)
        log.info("run %d/%d done, final train loss %.4f", run, n_models, out.train_loss[-1])
        for index, ckpt, tables in zip(out.indices, out.checkpoints, out.tables):
            store.add(run, index, tables, ckpt)
            if root is not None:
                for split, table in tables.items():
                    save_eval_table(table, root / f"run-{run}" / f"{split}-{format_index(index)}.phe")
        outputs[run] = out
    store.meta = {
        "synth": {"seed": cfg.seed, "n_train": len(data.train), "n_eval": len(data.val),
                  "noise_rate": float(data.train.flip_mask.mean()), "config": asdict(cfg)},
        "subsamples": {str(r): o.subsample.tolist() for r, o in outputs.items()},
    }
    if root is not None:
        (root / "store.json").write_text(json.dumps(store.meta))
    return Experiment(store, data, cfg, outputs)


def _disk_sink(run_dir: Path):
    def sink(index: float, ckpt: CheckpointTensors):
        stem = run_dir / f"ckpt-{format_index(index)}"
        save_checkpoint(ckpt, stem)
        return lambda: load_checkpoint(stem)
    return sink


def evaluator_from_meta(meta: dict) -> MlpEvaluator:
    """Rebuild the evaluation sets of a saved synthetic store."""
    try:
        info = meta["synth"]
    except (KeyError, TypeError):
        raise ValidationError("store has no synthetic-experiment metadata") from None
    data = make_data(info["seed"], info["n_train"], info["n_eval"], info["noise_rate"])
    return MlpEvaluator(data.eval_sets(), info.get("config", {}).get("dtype", "float64"))


def clean_labels_from_meta(meta: dict, split: str):
    """Clean labels of a split of a saved synthetic store, or None for other stores."""
    info = meta.get("synth") if isinstance(meta, dict) else None
    if info is None:
        return None
    data = make_data(info["seed"], info["n_train"], info["n_eval"], info["noise_rate"])
    sets = {"train": data.train, **data.eval_sets()}
    return sets[split].clean_labels if split in sets else None


def config_for(preset: str, **overrides) -> MlpConfig:
    base = {"full": FULL, "desk": DESK}.get(preset)
    if base is None:
        raise ValidationError(f"unknown preset {preset!r} (expected 'full' or 'desk')")
    return replace(base, **{k: v for k, v in overrides.items() if v is not None})


def train_predictions(exp: Experiment, run: int) -> np.ndarray:
    """(checkpoints x training examples) matrix of predicted classes."""
    return np.array(exp.runs[run].train_predictions)
