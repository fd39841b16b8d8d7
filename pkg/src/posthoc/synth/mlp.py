"""A small ReLU MLP with hand-written backpropagation and plain SGD training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import TrainingError, ValidationError
from ..store import CheckpointSource, CheckpointTensors, EvalTable
from .data import SpiralsDataset, rng_for


@dataclass(frozen=True)
class MlpConfig:
    depth: int = 4          # number of affine layers
    hidden: int = 512
    classes: int = 2
    lr: float = 0.05
    epochs: int = 1000
    batch: int = 64
    subsample: float = 0.5
    seed: int = 0
    ckpt_interval: int = 10
    dtype: str = "float32"  # precision of the network itself; logits are widened to float64

    def __post_init__(self):
        if self.depth < 2 or self.hidden < 1 or self.classes < 2:
            raise ValidationError("need depth >= 2, hidden >= 1, classes >= 2")
        if not 0 < self.subsample <= 1:
            raise ValidationError(f"subsample must lie in (0, 1], got {self.subsample}")
        if self.epochs < 1 or self.batch < 1 or self.ckpt_interval < 1:
            raise ValidationError("epochs, batch and ckpt_interval must be positive")
        if self.lr < 0:
            raise ValidationError("learning rate must be non-negative")

    def layer_sizes(self, n_inputs: int = 2) -> list[int]:
        return [n_inputs] + [self.hidden] * (self.depth - 1) + [self.classes]


def init_params(cfg: MlpConfig, rng: np.random.Generator, n_inputs: int = 2) -> list[np.ndarray]:
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.

    Returned as a flat list ``[W1, b1, W2, b2, ...]``.
    """
    sizes = cfg.layer_sizes(n_inputs)
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def params_to_checkpoint(params) -> CheckpointTensors:
    names = {}
    for i in range(0, len(params), 2):
        names[f"W{i // 2 + 1}"] = params[i]
        names[f"b{i // 2 + 1}"] = params[i + 1]
    return CheckpointTensors(names)


def checkpoint_to_params(ckpt: CheckpointTensors, n_inputs: int = 2) -> list[np.ndarray]:
    depth = len(ckpt) // 2
    expected = [f"{p}{i}" for i in range(1, depth + 1) for p in "Wb"]
    if depth < 1 or sorted(ckpt.names) != sorted(expected):
        raise ValidationError(f"checkpoint tensors {ckpt.names} do not form an MLP "
                              f"(expected W1, b1, ..., W{depth}, b{depth})")
    params = []
    width = n_inputs
    for i in range(1, depth + 1):
        w, b = ckpt[f"W{i}"], ckpt[f"b{i}"]
        if w.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
            raise ValidationError(f"layer {i}: W{i} {w.shape} / b{i} {b.shape} do not "
                                  f"chain from width {width}")
        params += [w, b]
        width = w.shape[1]
    return params


def forward(params, x: np.ndarray) -> np.ndarray:
    h = x
    last = len(params) - 2
    for i in range(0, len(params), 2):
        h = h @ params[i] + params[i + 1]
        if i < last:
            np.maximum(h, 0, out=h)
    return h


def mlp_forward(ckpt: CheckpointTensors, inputs, dtype="float64") -> np.ndarray:
    """Logits of the MLP stored in ``ckpt`` on an (M, 2) input matrix.

    The network runs in ``dtype``; the returned logits are always float64.
    """
    dt = np.dtype(dtype)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"inputs must be 2-D, got shape {x.shape}")
    params = [p.astype(dt, copy=False) for p in checkpoint_to_params(ckpt, n_inputs=x.shape[1])]
    return forward(params, x.astype(dt, copy=False)).astype(np.float64)


def loss_and_grads(params, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy on a batch and its gradient w.r.t. every parameter."""
    acts = [x]
    h = x
    last = len(params) - 2
    for i in range(0, len(params), 2):
        h = h @ params[i] + params[i + 1]
        if i < last:
            h = np.maximum(h, 0)
        acts.append(h)
    logits = acts[-1]
    n = len(y)
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    loss = float(np.mean(np.log(denom) - shifted[rows, y]))

    delta = e / denom[:, None]
    delta[rows, y] -= 1
    delta /= n
    grads = [None] * len(params)
    for i in range(last, -1, -2):
        a_in = acts[i // 2]
        grads[i] = a_in.T @ delta
        grads[i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params[i].T
            delta *= a_in > 0
    return loss, grads


@dataclass
class TrainRunOutput:
    run: int
    indices: list[float] = field(default_factory=list)
    checkpoints: list[CheckpointSource] = field(default_factory=list)
    tables: list[dict[str, EvalTable]] = field(default_factory=list)
    train_predictions: list[np.ndarray] = field(default_factory=list)
    subsample: np.ndarray | None = None
    train_loss: list[float] = field(default_factory=list)


def eval_tables(ckpt: CheckpointTensors, eval_sets: dict[str, SpiralsDataset],
                dtype="float64") -> dict[str, EvalTable]:
    # one forward pass over all splits
    names = list(eval_sets)
    logits = mlp_forward(ckpt, np.concatenate([eval_sets[k].points for k in names]), dtype)
    bounds = np.cumsum([0] + [len(eval_sets[k]) for k in names])
    return {k: EvalTable(logits[a:b], eval_sets[k].labels)
            for k, a, b in zip(names, bounds[:-1], bounds[1:])}


def mlp_train(data: SpiralsDataset, cfg: MlpConfig, run: int = 1,
              eval_sets: dict[str, SpiralsDataset] | None = None,
              sink: Callable[[float, CheckpointTensors], CheckpointSource] | None = None,
              ) -> TrainRunOutput:
    """Train one MLP with mini-batch SGD on a random subsample of ``data``.

    Every ``cfg.ckpt_interval`` epochs the weights are checkpointed and
    evaluated on ``data`` (split ``"train"``) plus each of ``eval_sets``.
    ``sink`` may persist a checkpoint and return a lazy handle in its place.
    """
    dtype = np.dtype(cfg.dtype)
    sets = {"train": data, **(eval_sets or {})}
    n = len(data)
    n_sub = max(1, int(round(cfg.subsample * n)))
    subsample = np.sort(rng_for(cfg.seed, run, "subsample").choice(n, size=n_sub, replace=False))
    x = data.points[subsample].astype(dtype)
    y = data.labels[subsample]

    params = [p.astype(dtype) for p in init_params(cfg, rng_for(cfg.seed, run, "init"))]
    batch_rng = rng_for(cfg.seed, run, "batches")
    out = TrainRunOutput(run=run, subsample=subsample)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = batch_rng.permutation(n_sub)
        total = 0.0
        for start in range(0, n_sub, cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, grads = loss_and_grads(params, x[idx], y[idx])
            step += 1
            if not math.isfinite(loss):
                raise TrainingError(f"run {run}: non-finite loss at step {step} "
                                    f"(epoch {epoch})", step=step)
            total += loss * len(idx)
            if cfg.lr:
                for p, g in zip(params, grads):
                    p -= cfg.lr * g
        out.train_loss.append(total / n_sub)
        if epoch % cfg.ckpt_interval == 0:
            ckpt = params_to_checkpoint(params)
            tables = eval_tables(ckpt, sets, dtype)
            out.indices.append(float(epoch))
            out.tables.append(tables)
            out.train_predictions.append(tables["train"].predictions())
            out.checkpoints.append(sink(float(epoch), ckpt) if sink else ckpt)
    return out
