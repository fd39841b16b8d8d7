"""Base and post-hoc curves, reversal detection and learning-dynamics diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .calibrate import FitOptions, apply_temperature, fit_temperature
from .errors import ValidationError
from .metrics import compute_metric
from .store import EvalTable, RunStore
from .transforms import KINDS, StoreEvaluator, ens_ts_tables, swa_prefix_tables


@dataclass
class CurvePair:
    indices: list[float]
    base: list[float]
    post: list[float]
    metric: str
    transform: str
    base_convention: str = "latest"  # or "prefix_mean" for SWA kinds

    def __post_init__(self):
        if not len(self.indices) == len(self.base) == len(self.post):
            raise ValidationError("indices, base and post must have equal length")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValidationError("curve indices must be strictly increasing")

    def to_json(self) -> dict:
        return {"indices": list(self.indices), "base": list(self.base),
                "post": list(self.post), "metric": self.metric,
                "transform": self.transform, "base_convention": self.base_convention}

    @classmethod
    def from_json(cls, doc: Mapping) -> "CurvePair":
        try:
            return cls([float(i) for i in doc["indices"]], [float(v) for v in doc["base"]],
                       [float(v) for v in doc["post"]], doc.get("metric", "error"),
                       doc.get("transform", "TS"), doc.get("base_convention", "latest"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed curve document: {exc}") from exc


@dataclass
class ReversalReport:
    reversed: bool
    witnesses: list[tuple[float, float]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.witnesses)

    def to_json(self) -> dict:
        return {"reversed": self.reversed, "witnesses": [list(w) for w in self.witnesses],
                "count": self.count}


def base_curve(per_index_tables: Mapping[float, EvalTable], metric: str = "error",
               clean_labels=None) -> list[float]:
    """Metric of each checkpoint's own table, ordered by index."""
    if not per_index_tables:
        raise ValidationError("base curve needs at least one table")
    return [compute_metric(per_index_tables[t], metric, clean_labels).value
            for t in sorted(per_index_tables)]


def mean_base_curve(store: RunStore, metric: str = "error", split: str = "test",
                    runs=None, clean_labels=None,
                    convention: str = "latest") -> tuple[list[float], list[float]]:
    """Mean over runs of per-run base curves on the runs' common index grid.

    ``convention="latest"`` uses each checkpoint's own metric (how training
    curves are usually read); ``"prefix_mean"`` averages the metric over all
    checkpoints up to the index, the strict base curve for weight averaging.
    """
    if convention not in ("latest", "prefix_mean"):
        raise ValidationError(f"unknown base-curve convention {convention!r}")
    runs = sorted(store.runs if runs is None else runs)
    grid = store.common_indices(runs)
    if not grid:
        raise ValidationError("runs share no checkpoint indices")
    per_run = [base_curve({t: store.table(r, t, split) for t in grid}, metric, clean_labels)
               for r in runs]
    if convention == "prefix_mean":
        per_run = [(np.cumsum(s) / np.arange(1, len(s) + 1)).tolist() for s in per_run]
    return grid, _mean_in_order(per_run)


def _mean_in_order(series: Sequence[Sequence[float]]) -> list[float]:
    acc = np.zeros(len(series[0]))
    for s in series:
        acc += np.asarray(s, dtype=np.float64)
    return (acc / len(series)).tolist()


def posthoc_curve(store: RunStore, kind: str, metric: str = "error",
                  evaluator: StoreEvaluator | None = None, split: str = "test",
                  runs=None, opts: FitOptions | None = None,
                  clean_labels=None) -> tuple[list[float], list[float]]:
    """Post-hoc metric at each index using the index's parameter tuple.

    TS uses the checkpoint itself, Ens the same index across runs, SWA the
    prefix of checkpoints up to the index. Single-model kinds (TS, SWA,
    SWA_TS) are averaged over ``runs``; ensemble kinds combine them.
    Returns ``(indices, values)``.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown transform kind {kind!r}")
    runs = sorted(store.runs if runs is None else runs)
    grid = store.common_indices(runs)
    if not grid:
        raise ValidationError("runs share no checkpoint indices")

    def value(t: EvalTable) -> float:
        return compute_metric(t, metric, clean_labels).value

    if kind == "TS":
        per_run = []
        for r in runs:
            series = []
            for t in grid:
                fit = fit_temperature(store.table(r, t, "val"), opts)
                series.append(value(apply_temperature(store.table(r, t, split), fit.tau)))
            per_run.append(series)
        return grid, _mean_in_order(per_run)

    if kind == "Ens":
        out = []
        for t in grid:
            members = [{"val": store.table(r, t, "val"), split: store.table(r, t, split)}
                       for r in runs]
            _, _, tables = ens_ts_tables(members, opts, outer=False)
            out.append(value(tables[split]))
        return grid, out

    swa = {r: dict(swa_prefix_tables(store, r, evaluator)) for r in runs}
    if kind in ("SWA", "SWA_TS"):
        per_run = []
        for r in runs:
            series = []
            for t in grid:
                tables = swa[r][t]
                if kind == "SWA":
                    series.append(value(tables[split]))
                else:
                    fit = fit_temperature(tables["val"], opts)
                    series.append(value(apply_temperature(tables[split], fit.tau)))
            per_run.append(series)
        return grid, _mean_in_order(per_run)

    out = []
    for t in grid:
        members = [{"val": swa[r][t]["val"], split: swa[r][t][split]} for r in runs]
        _, _, tables = ens_ts_tables(members, opts)
        out.append(value(tables[split]))
    return grid, out


def curve_pair(store: RunStore, kind: str, metric: str = "error",
               evaluator: StoreEvaluator | None = None, split: str = "test",
               runs=None, opts: FitOptions | None = None,
               convention: str = "latest", clean_labels=None) -> CurvePair:
    grid, base = mean_base_curve(store, metric, split, runs, clean_labels, convention)
    _, post = posthoc_curve(store, kind, metric, evaluator, split, runs, opts, clean_labels)
    return CurvePair(grid, base, post, metric, kind, convention)


def detect_reversal(c: CurvePair) -> ReversalReport:
    """All ordered pairs ``(s, t)`` with ``base(s) >= base(t)`` and ``post(s) < post(t)``."""
    if len(c.indices) < 2:
        raise ValidationError("reversal detection needs at least two indices")
    base = np.asarray(c.base, dtype=np.float64)
    post = np.asarray(c.post, dtype=np.float64)
    hits = (base[:, None] >= base[None, :]) & (post[:, None] < post[None, :])
    s_pos, t_pos = np.nonzero(hits)  # row-major, so lexicographic in (s, t)
    witnesses = [(c.indices[s], c.indices[t]) for s, t in zip(s_pos, t_pos)]
    return ReversalReport(bool(witnesses), witnesses)


def flip_rate(preds_a, preds_b, mask) -> tuple[float, float]:
    """Fraction of changed predictions on ``mask`` and on its complement."""
    a, b = np.asarray(preds_a), np.asarray(preds_b)
    mask = np.asarray(mask, dtype=bool)
    if not a.shape == b.shape == mask.shape or a.ndim != 1:
        raise ValidationError(f"length mismatch: {a.shape}, {b.shape}, {mask.shape}")
    if mask.all() or not mask.any():
        raise ValidationError("both the masked subset and its complement must be nonempty")
    changed = a != b
    return float(changed[mask].mean()), float(changed[~mask].mean())


def flip_rate_series(predictions: Sequence[np.ndarray], mask) -> tuple[list[float], list[float]]:
    """Flip rates between each pair of consecutive checkpoints."""
    on, off = [], []
    for a, b in zip(predictions, predictions[1:]):
        x, y = flip_rate(a, b, mask)
        on.append(x)
        off.append(y)
    return on, off


def temperature_trajectory(store: RunStore, run: int, opts: FitOptions | None = None,
                           split: str = "val") -> list[float]:
    """Fitted temperature at each checkpoint of ``run``."""
    return [fit_temperature(store.table(run, t, split), opts).tau for t in store.indices(run)]
