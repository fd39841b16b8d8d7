"""Classification error, cross-entropy loss, perplexity and subset variants.

All means are accumulated in row order in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .store import EvalTable

KINDS = ("error", "loss", "perplexity", "clean_error")


@dataclass(frozen=True)
class MetricValue:
    kind: str
    value: float
    n: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown metric kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value, "n": self.n}


def softmax_row(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1)
    return m + np.log(np.exp(logits - m[:, None]).sum(axis=1))


def _row_mean(values: np.ndarray) -> float:
    # np.sum uses pairwise summation; accumulate is strictly left-to-right
    return float(np.add.accumulate(values, dtype=np.float64)[-1] / len(values))


def per_row_error(t: EvalTable) -> np.ndarray:
    return (t.predictions() != t.labels).astype(np.float64)


def per_row_loss(t: EvalTable) -> np.ndarray:
    z = t.logits
    return logsumexp_rows(z) - z[np.arange(t.n), t.labels]


def error_metric(t: EvalTable) -> MetricValue:
    return MetricValue("error", _row_mean(per_row_error(t)), t.n)


def loss_metric(t: EvalTable) -> MetricValue:
    return MetricValue("loss", _row_mean(per_row_loss(t)), t.n)


def perplexity_metric(loss: MetricValue) -> MetricValue:
    if loss.kind != "loss":
        raise ValidationError(f"perplexity needs a loss value, got {loss.kind!r}")
    return MetricValue("perplexity", math.exp(loss.value), loss.n)


def clean_error_metric(t: EvalTable, clean_labels) -> MetricValue:
    """Error measured against an alternate (clean) label vector."""
    clean = np.asarray(clean_labels)
    if clean.shape != (t.n,):
        raise ValidationError(f"clean labels need shape ({t.n},), got {clean.shape}")
    return MetricValue("clean_error", error_metric(t.with_labels(clean)).value, t.n)


def compute_metric(t: EvalTable, kind: str, clean_labels=None) -> MetricValue:
    if kind == "error":
        return error_metric(t)
    if kind == "loss":
        return loss_metric(t)
    if kind == "perplexity":
        return perplexity_metric(loss_metric(t))
    if kind == "clean_error":
        if clean_labels is None:
            raise ValidationError("clean_error requires a clean label vector")
        return clean_error_metric(t, clean_labels)
    raise ValidationError(f"unknown metric kind {kind!r}")


def subset_metrics(t: EvalTable, mask, kind: str = "error",
                   clean_labels=None) -> tuple[MetricValue, MetricValue]:
    """Metric on the rows selected by ``mask`` and on the remaining rows."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t.n,):
        raise ValidationError(f"mask needs shape ({t.n},), got {mask.shape}")
    if mask.all() or not mask.any():
        raise ValidationError("both the masked subset and its complement must be nonempty")
    out = []
    for sel in (mask, ~mask):
        sub = EvalTable(t.logits[sel], t.labels[sel])
        clean = None if clean_labels is None else np.asarray(clean_labels)[sel]
        out.append(compute_metric(sub, kind, clean))
    return out[0], out[1]
