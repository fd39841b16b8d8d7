"""Checkpoint selection: naive, post-hoc (SWA+TS, SWA+Ens+TS), hybrid, and a
streaming early-stopping monitor.

Ties are broken by the earliest index throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .calibrate import FitOptions
from .errors import ValidationError
from .metrics import MetricValue, compute_metric
from .store import CheckpointTensors, RunStore
from .transforms import (Evaluate, StoreEvaluator, SwaState, TransformSpec, ens_ts_tables,
                         swa_prefix_tables, swa_update, ts_tables)

STRATEGIES = ("naive", "posthoc_swa_ts", "posthoc_swa_ens_ts", "hybrid")


@dataclass
class SelectionReport:
    strategy: str
    chosen: dict[int, float]
    val_metric: MetricValue
    test_metric: MetricValue
    transform: TransformSpec
    # both metrics on the test split, whichever drove the selection
    test_metrics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown selection strategy {self.strategy!r}")

    def to_json(self) -> dict:
        return {"strategy": self.strategy,
                "chosen": {str(r): t for r, t in self.chosen.items()},
                "val_metric": self.val_metric.to_json(),
                "test_metric": self.test_metric.to_json(),
                "test_metrics": dict(self.test_metrics),
                "transform": self.transform.to_json()}


def _argmin(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """``(index, value)`` with the smallest value; earliest index wins ties."""
    if not pairs:
        raise ValidationError("cannot select from an empty series")
    best = None
    for index, value in sorted(pairs):
        if best is None or value < best[1]:
            best = (index, value)
    return best


def naive_select(val_series) -> float:
    """Index minimising a base validation series.

    ``val_series`` is a mapping index -> value, or a sequence of values for
    indices 1, 2, ...
    """
    if isinstance(val_series, Mapping):
        pairs = [(float(k), float(v)) for k, v in val_series.items()]
    else:
        pairs = [(float(i), float(v)) for i, v in enumerate(val_series, start=1)]
    return _argmin(pairs)[0]


def _report(strategy, chosen, tables, metric, spec) -> SelectionReport:
    val = compute_metric(tables["val"], metric)
    test = compute_metric(tables["test"], metric)
    both = {k: compute_metric(tables["test"], k).value for k in ("error", "loss")}
    return SelectionReport(strategy, chosen, val, test, spec, both)


def _swa_ts_at(swa_tables, opts):
    fit, scaled = ts_tables(swa_tables["val"], {"test": swa_tables["test"]}, opts)
    return fit, scaled


def posthoc_select_swa_ts(store: RunStore, run: int, metric: str = "loss",
                          evaluator: StoreEvaluator | None = None,
                          opts: FitOptions | None = None) -> SelectionReport:
    """Pick the prefix length whose SWA+TS model minimises the validation metric."""
    prefixes = swa_prefix_tables(store, run, evaluator)
    scored = []
    for index, tables in prefixes:
        _, scaled = _swa_ts_at(tables, opts)
        scored.append((index, compute_metric(scaled["val"], metric).value))
    best, _ = _argmin(scored)
    return swa_ts_at_index(store, run, best, metric, evaluator, opts, "posthoc_swa_ts")


def swa_ts_at_index(store: RunStore, run: int, index: float, metric: str = "loss",
                    evaluator: StoreEvaluator | None = None, opts: FitOptions | None = None,
                    strategy: str = "naive") -> SelectionReport:
    """SWA+TS over the checkpoints of ``run`` up to ``index``."""
    tables = dict(swa_prefix_tables(store, run, evaluator))
    if index not in tables:
        raise ValidationError(f"run {run} has no checkpoint at index {index:g}")
    fit, scaled = _swa_ts_at(tables[index], opts)
    first = store.indices(run)[0]
    spec = TransformSpec("SWA_TS", [fit.tau], members=[(run, first, index)])
    return _report(strategy, {run: index}, scaled, metric, spec)


def naive_swa_ts(store: RunStore, run: int, metric: str = "loss",
                 evaluator: StoreEvaluator | None = None,
                 opts: FitOptions | None = None) -> SelectionReport:
    """Naive selection on the base validation metric, then SWA+TS at that index."""
    series = {t: compute_metric(store.table(run, t, "val"), metric).value
              for t in store.indices(run)}
    return swa_ts_at_index(store, run, naive_select(series), metric, evaluator, opts)


def swa_ens_ts_at(store: RunStore, chosen: Mapping[int, float], metric: str = "loss",
                  evaluator: StoreEvaluator | None = None, opts: FitOptions | None = None,
                  strategy: str = "naive") -> SelectionReport:
    """SWA+Ens+TS over per-run prefixes ending at ``chosen[run]``."""
    runs = sorted(chosen)
    members, spans = [], []
    for r in runs:
        tables = dict(swa_prefix_tables(store, r, evaluator))
        if chosen[r] not in tables:
            raise ValidationError(f"run {r} has no checkpoint at index {chosen[r]:g}")
        members.append(tables[chosen[r]])
        spans.append((r, store.indices(r)[0], chosen[r]))
    temps, tau_ens, scaled = ens_ts_tables(members, opts)
    spec = TransformSpec("SWA_Ens_TS", temps, tau_ens, spans)
    return _report(strategy, {r: chosen[r] for r in runs}, scaled, metric, spec)


def posthoc_select_swa_ens_ts(store: RunStore, runs=None, metric: str = "loss",
                              evaluator: StoreEvaluator | None = None,
                              opts: FitOptions | None = None) -> SelectionReport:
    """Shared-index search: every run contributes its prefix up to the same T."""
    runs = sorted(store.runs if runs is None else runs)
    grid = store.common_indices(runs)
    if not grid:
        raise ValidationError("runs share no checkpoint indices")
    swa = {r: dict(swa_prefix_tables(store, r, evaluator)) for r in runs}
    scored = []
    for t in grid:
        _, _, scaled = ens_ts_tables([swa[r][t] for r in runs], opts)
        scored.append((t, compute_metric(scaled["val"], metric).value))
    best, _ = _argmin(scored)
    return swa_ens_ts_at(store, {r: best for r in runs}, metric, evaluator, opts,
                         "posthoc_swa_ens_ts")


def naive_swa_ens_ts(store: RunStore, runs=None, metric: str = "loss",
                     evaluator: StoreEvaluator | None = None, opts: FitOptions | None = None,
                     shared: bool = False) -> SelectionReport:
    """Per-run naive indices, then SWA+Ens+TS.

    With ``shared=True`` every run is forced to the largest of the per-run
    naive indices, which places the comparison on the shared grid searched by
    :func:`posthoc_select_swa_ens_ts`.
    """
    runs = sorted(store.runs if runs is None else runs)
    chosen = {}
    for r in runs:
        series = {t: compute_metric(store.table(r, t, "val"), metric).value
                  for t in store.indices(r)}
        chosen[r] = naive_select(series)
    if shared:
        top = max(chosen.values())
        chosen = {r: top for r in runs}
    return swa_ens_ts_at(store, chosen, metric, evaluator, opts)


def hybrid_select(store: RunStore, runs=None, metric: str = "loss",
                  evaluator: StoreEvaluator | None = None,
                  opts: FitOptions | None = None) -> SelectionReport:
    """Post-hoc SWA+TS selection within each run, then ensemble the picks."""
    runs = sorted(store.runs if runs is None else runs)
    chosen = {r: posthoc_select_swa_ts(store, r, metric, evaluator, opts).chosen[r]
              for r in runs}
    return swa_ens_ts_at(store, chosen, metric, evaluator, opts, "hybrid")


# -- early stopping ---------------------------------------------------------------

@dataclass
class MonitorState:
    swa: SwaState = field(default_factory=SwaState)
    best_val: float = math.inf
    best_index: float | None = None
    since_best: int = 0
    patience: float = 10
    min_delta: float = 0.0
    history: list[tuple[float, float]] = field(default_factory=list)


def monitor_step(state: MonitorState, index: float, new_ckpt: CheckpointTensors,
                 evaluate: Evaluate, metric: str = "loss",
                 opts: FitOptions | None = None) -> tuple[MonitorState, str]:
    """Absorb one checkpoint and track the SWA+TS validation metric.

    Returns the updated state and ``"stop"`` once ``since_best`` reaches
    ``patience``, else ``"continue"``. An improvement counts only when it beats
    the best value by more than ``min_delta``.
    """
    swa = swa_update(state.swa, new_ckpt)
    tables = evaluate(swa.mean)
    if "val" not in tables:
        raise ValidationError("evaluator returned no 'val' table")
    _, scaled = ts_tables(tables["val"], {}, opts)
    value = compute_metric(scaled["val"], metric).value
    if value < state.best_val - state.min_delta:
        best_val, best_index, since = value, index, 0
    else:
        best_val, best_index, since = state.best_val, state.best_index, state.since_best + 1
    new = MonitorState(swa, best_val, best_index, since, state.patience, state.min_delta,
                       state.history + [(index, value)])
    return new, ("stop" if since >= state.patience else "continue")
