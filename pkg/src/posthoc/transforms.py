"""Ensembling, weight averaging and their compositions with temperature scaling.

Low-level compositions take an ``evaluate(ckpt) -> {split: EvalTable}``
callback. Store-level helpers take an ``evaluator(run, index, ckpt)`` so that
file-backed evaluators can look up externally produced bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .calibrate import FitOptions, TemperatureFit, apply_temperature, fit_temperature
from .errors import ValidationError
from .store import CheckpointTensors, EvalTable, RunStore, format_index, load_eval_table

KINDS = ("TS", "Ens", "SWA", "SWA_TS", "SWA_Ens_TS")

Evaluate = Callable[[CheckpointTensors], Mapping[str, EvalTable]]
StoreEvaluator = Callable[[int, float, CheckpointTensors], Mapping[str, EvalTable]]


@dataclass
class TransformSpec:
    kind: str
    member_temps: list[float] = field(default_factory=list)
    ensemble_temp: float | None = None
    # (run, first index, last index) per member; SWA members span a prefix
    members: list[tuple[int, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown transform kind {self.kind!r}")
        if self.member_temps and self.members and len(self.member_temps) != len(self.members):
            raise ValidationError("member_temps and members differ in length")

    def to_json(self) -> dict:
        return {"kind": self.kind, "member_temps": list(self.member_temps),
                "ensemble_temp": self.ensemble_temp,
                "members": [list(m) for m in self.members]}


def _check_compatible(tables: Sequence[EvalTable]):
    first = tables[0]
    for k, t in enumerate(tables[1:], start=2):
        if (t.n, t.c) != (first.n, first.c):
            raise ValidationError(f"member {k} has shape {(t.n, t.c)}, expected "
                                  f"{(first.n, first.c)}")
        if not np.array_equal(t.labels, first.labels):
            raise ValidationError(f"member {k} has different labels")


def ensemble_logits(tables: Sequence[EvalTable], temps: Sequence[float] | None = None) -> EvalTable:
    """Mean of temperature-scaled member logits, accumulated in member order."""
    tables = list(tables)
    if not tables:
        raise ValidationError("ensemble needs at least one member")
    temps = [1.0] * len(tables) if temps is None else list(temps)
    if len(temps) != len(tables):
        raise ValidationError(f"{len(temps)} temperatures for {len(tables)} members")
    if any(not tau > 0 for tau in temps):
        raise ValidationError("member temperatures must be positive")
    _check_compatible(tables)
    acc = np.zeros_like(tables[0].logits)
    for t, tau in zip(tables, temps):
        acc += t.logits * (1.0 / tau)
    return tables[0].with_logits(acc / len(tables))


def _check_schema(a: CheckpointTensors, b: CheckpointTensors):
    if a.schema() != b.schema():
        raise ValidationError(f"checkpoint schema mismatch: {a.schema()} vs {b.schema()}")


def swa_mean(checkpoints: Sequence[CheckpointTensors]) -> CheckpointTensors:
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ValidationError("weight averaging needs at least one checkpoint")
    first = checkpoints[0]
    acc = {k: np.zeros_like(v) for k, v in first.tensors.items()}
    for ck in checkpoints:
        _check_schema(first, ck)
        for k in acc:
            acc[k] += ck[k]
    return CheckpointTensors({k: v / len(checkpoints) for k, v in acc.items()})


@dataclass(frozen=True)
class SwaState:
    mean: CheckpointTensors | None = None
    count: int = 0


def swa_update(state: SwaState, new: CheckpointTensors) -> SwaState:
    """Fold one checkpoint into a running weight average."""
    if state.mean is None:
        return SwaState(CheckpointTensors(new.tensors), 1)
    _check_schema(state.mean, new)
    k = state.count + 1
    mean = {name: m + (new[name] - m) / k for name, m in state.mean.tensors.items()}
    return SwaState(CheckpointTensors(mean), k)


# -- compositions on evaluated tables ------------------------------------------

def ts_tables(val: EvalTable, others: Mapping[str, EvalTable],
              opts: FitOptions | None = None) -> tuple[TemperatureFit, dict[str, EvalTable]]:
    """Fit a temperature on ``val`` and apply it to ``val`` and every other table."""
    fit = fit_temperature(val, opts)
    out = {"val": apply_temperature(val, fit.tau)}
    for split, t in others.items():
        out[split] = apply_temperature(t, fit.tau)
    return fit, out


def ens_ts_tables(members: Sequence[Mapping[str, EvalTable]], opts: FitOptions | None = None,
                  outer: bool = True) -> tuple[list[float], float | None, dict[str, EvalTable]]:
    """Temperature-scale each member on its val table, average, then (optionally)
    fit one more temperature on the averaged val logits.

    Returns ``(member_temps, ensemble_temp, tables)``.
    """
    if not members:
        raise ValidationError("ensemble needs at least one member")
    temps = [fit_temperature(m["val"], opts).tau for m in members]
    splits = list(members[0])
    mixed = {s: ensemble_logits([m[s] for m in members], temps) for s in splits}
    if not outer:
        return temps, None, mixed
    fit, scaled = ts_tables(mixed["val"], {s: t for s, t in mixed.items() if s != "val"}, opts)
    return temps, fit.tau, scaled


def _require_splits(tables: Mapping[str, EvalTable], where: str):
    for split in ("val", "test"):
        if split not in tables:
            raise ValidationError(f"{where}: evaluator returned no {split!r} table")


def compose_swa_ts(prefix: Sequence[CheckpointTensors], evaluate: Evaluate,
                   opts: FitOptions | None = None):
    """Average ``prefix``, evaluate the averaged weights, then temperature-scale.

    Returns ``(TransformSpec, val table, test table)``.
    """
    if not prefix:
        raise ValidationError("SWA+TS needs a nonempty checkpoint prefix")
    tables = evaluate(swa_mean(prefix))
    _require_splits(tables, "SWA+TS")
    fit, scaled = ts_tables(tables["val"], {"test": tables["test"]}, opts)
    spec = TransformSpec("SWA_TS", member_temps=[fit.tau])
    return spec, scaled["val"], scaled["test"]


def compose_swa_ens_ts(runs: Sequence[Sequence[CheckpointTensors]], evaluate: Evaluate,
                       opts: FitOptions | None = None):
    """SWA per run, TS per run, average across runs, then a final TS.

    The result is ``(1/tau_ens) * mean_l (1/tau_l) * f(x; mean(theta^l))``.
    """
    if not runs:
        raise ValidationError("SWA+Ens+TS needs at least one run")
    members = []
    for l, prefix in enumerate(runs, start=1):
        if not prefix:
            raise ValidationError(f"run {l}: empty checkpoint prefix")
        tables = evaluate(swa_mean(prefix))
        _require_splits(tables, f"SWA+Ens+TS run {l}")
        members.append({"val": tables["val"], "test": tables["test"]})
    temps, tau_ens, scaled = ens_ts_tables(members, opts)
    spec = TransformSpec("SWA_Ens_TS", member_temps=temps, ensemble_temp=tau_ens)
    return spec, scaled["val"], scaled["test"]


# -- store-level weight averaging -------------------------------------------------

def swa_prefix_tables(store: RunStore, run: int, evaluator: StoreEvaluator
                      ) -> list[tuple[float, dict[str, EvalTable]]]:
    """Evaluate the running weight average at every index of ``run``.

    The running mean is maintained with :func:`swa_update`. Results are cached
    on the store per ``(run, evaluator)``.
    """
    if evaluator is None:
        raise ValidationError("weight averaging needs an evaluator")
    cache = store.__dict__.setdefault("_swa_cache", {})
    key = (run, id(evaluator))
    hit = cache.get(key)
    if hit is not None and hit[0] is evaluator:
        return hit[1]
    state = SwaState()
    out = []
    for index in store.indices(run):
        state = swa_update(state, store.checkpoint(run, index))
        tables = dict(evaluator(run, index, state.mean))
        _require_splits(tables, f"run {run}, SWA prefix up to {index:g}")
        out.append((index, tables))
    cache[key] = (evaluator, out)
    return out


class BundleEvaluator:
    """Reads externally evaluated averaged models from ``run-<j>/swa/<split>-<index>.phe``.

    Used when the model lives outside this package: ``swa`` writes averaged
    checkpoints, an external tool evaluates them (recomputing normalisation
    statistics if the architecture needs it) and writes eval bundles back.
    """

    def __init__(self, root, splits=("val", "test")):
        self.root = Path(root)
        self.splits = tuple(splits)

    def __call__(self, run, index, ckpt=None):
        out = {}
        for split in self.splits:
            path = self.root / f"run-{run}" / "swa" / f"{split}-{format_index(index)}.phe"
            if not path.exists():
                raise ValidationError(f"missing averaged-model bundle {path}")
            out[split] = load_eval_table(path)
        return out
