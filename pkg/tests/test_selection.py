import math

import numpy as np
import pytest

from posthoc.errors import ValidationError
from posthoc.selection import (MonitorState, SelectionReport, hybrid_select, monitor_step,
                               naive_select, naive_swa_ens_ts, naive_swa_ts,
                               posthoc_select_swa_ens_ts, posthoc_select_swa_ts,
                               swa_ens_ts_at, swa_ts_at_index)
from posthoc.store import CheckpointTensors, EvalTable, RunStore


def test_naive_select_examples():
    assert naive_select([0.5, 0.3, 0.4]) == 2
    assert naive_select([0.3, 0.3]) == 1
    assert naive_select({10: 0.2, 20: 0.1, 30: 0.1}) == 20
    assert naive_select([0.7]) == 1
    with pytest.raises(ValidationError):
        naive_select([])


@pytest.mark.parametrize("metric", ["loss", "error"])
def test_posthoc_dominates_naive_on_val(tiny_experiment, metric):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    for run in store.runs:
        ph = posthoc_select_swa_ts(store, run, metric, ev)
        nv = naive_swa_ts(store, run, metric, ev)
        assert ph.val_metric.value <= nv.val_metric.value
    ph = posthoc_select_swa_ens_ts(store, metric=metric, evaluator=ev)
    nv = naive_swa_ens_ts(store, metric=metric, evaluator=ev, shared=True)
    assert ph.val_metric.value <= nv.val_metric.value


def test_posthoc_is_exact_argmin(tiny_experiment):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    ph = posthoc_select_swa_ts(store, 1, "loss", ev)
    values = [swa_ts_at_index(store, 1, t, "loss", ev).val_metric.value
              for t in store.indices(1)]
    assert ph.val_metric.value == min(values)
    assert ph.chosen[1] == store.indices(1)[values.index(min(values))]


def test_single_checkpoint_reduces_to_ts():
    rng = np.random.default_rng(0)
    z, y = rng.normal(size=(40, 3)), rng.integers(0, 3, 40)
    tables = {"val": EvalTable(z, y), "test": EvalTable(z[::-1], y)}
    store = RunStore()
    store.add(1, 1, tables, CheckpointTensors({"w": [0.0]}))
    ev = lambda r, i, c: tables
    ph = posthoc_select_swa_ts(store, 1, "loss", ev)
    nv = naive_swa_ts(store, 1, "loss", ev)
    assert ph.chosen == nv.chosen == {1: 1.0}
    assert ph.val_metric == nv.val_metric
    assert ph.strategy == "posthoc_swa_ts" and nv.strategy == "naive"


def test_ensemble_selection_with_one_run_matches_swa_ts_error(tiny_experiment):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    ens = posthoc_select_swa_ens_ts(store, runs=[2], metric="error", evaluator=ev)
    single = posthoc_select_swa_ts(store, 2, "error", ev)
    assert ens.chosen == single.chosen
    assert ens.val_metric.value == single.val_metric.value


def test_run_order_does_not_matter(tiny_experiment):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    a = posthoc_select_swa_ens_ts(store, runs=[1, 2, 3], evaluator=ev)
    b = posthoc_select_swa_ens_ts(store, runs=[3, 1, 2], evaluator=ev)
    assert a.chosen == b.chosen and a.val_metric == b.val_metric


def test_hybrid_uses_per_run_posthoc_picks(tiny_experiment):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    hy = hybrid_select(store, metric="loss", evaluator=ev)
    for r in store.runs:
        assert hy.chosen[r] == posthoc_select_swa_ts(store, r, "loss", ev).chosen[r]
    again = swa_ens_ts_at(store, hy.chosen, "loss", ev)
    assert again.val_metric == hy.val_metric
    assert hy.strategy == "hybrid"


def test_report_json_and_validation(tiny_experiment):
    store, ev = tiny_experiment.store, tiny_experiment.evaluator()
    doc = posthoc_select_swa_ts(store, 1, "error", ev).to_json()
    assert set(doc) >= {"strategy", "chosen", "val_metric", "test_metric", "transform"}
    assert set(doc["test_metrics"]) == {"error", "loss"}
    with pytest.raises(ValidationError):
        swa_ts_at_index(store, 1, 12345.0, "loss", ev)
    r = posthoc_select_swa_ts(store, 1, "error", ev)
    with pytest.raises(ValidationError):
        SelectionReport("bogus", r.chosen, r.val_metric, r.test_metric, r.transform)


# -- monitor ---------------------------------------------------------------------

def _scaled_series(noise=0.8):
    """Checkpoint weights ``s`` (logit scale) and ``b`` (true-class bias); evaluation is linear."""
    rng = np.random.default_rng(6)
    z = rng.normal(size=(60, 3))
    y = np.argmax(z + rng.normal(0, noise, size=z.shape), axis=1)
    onehot = np.eye(3)[y]

    def evaluate(c):
        return {"val": EvalTable(c["s"][0] * z + c["b"][0] * onehot, y)}
    return evaluate


def test_monitor_improving_never_stops():
    evaluate = _scaled_series()
    state = MonitorState(patience=1)
    for k in range(1, 13):
        # the running mean of b grows, which no temperature can undo
        ck = CheckpointTensors({"s": [1.0], "b": [0.2 * k]})
        state, action = monitor_step(state, k, ck, evaluate)
        assert action == "continue"
        assert state.best_index == k


def test_monitor_constant_stops_after_patience():
    evaluate = _scaled_series()
    state = MonitorState(patience=3)
    actions = []
    for k in range(1, 8):
        state, action = monitor_step(state, k, CheckpointTensors({"s": [1.0], "b": [0.0]}),
                                     evaluate)
        actions.append(action)
    assert actions[:3] == ["continue"] * 3
    assert actions[3] == "stop"
    assert state.best_index == 1


def test_monitor_min_delta():
    evaluate = _scaled_series()
    loose = MonitorState(patience=1, min_delta=0.0)
    strict = MonitorState(patience=1, min_delta=10.0)
    for k, s in enumerate([1.0, 3.0], start=1):
        ck = CheckpointTensors({"s": [s], "b": [0.5]})
        loose, la = monitor_step(loose, k, ck, evaluate)
        strict, sa = monitor_step(strict, k, ck, evaluate)
    assert strict.best_index == 1 and sa == "stop"
    assert loose.history[1][1] != loose.history[0][1]


def test_monitor_infinite_patience_matches_posthoc(tiny_experiment):
    exp = tiny_experiment
    store, ev = exp.store, exp.evaluator()
    state = MonitorState(patience=math.inf)
    for t in store.indices(1):
        state, action = monitor_step(state, t, store.checkpoint(1, t),
                                     lambda c: ev(1, t, c))
        assert action == "continue"
    ph = posthoc_select_swa_ts(store, 1, "loss", ev)
    assert state.best_index == ph.chosen[1]
    assert state.best_val == pytest.approx(ph.val_metric.value, rel=1e-9)
    assert [t for t, _ in state.history] == store.indices(1)


def test_monitor_requires_val():
    with pytest.raises(ValidationError):
        monitor_step(MonitorState(), 1, CheckpointTensors({"w": [1.0]}), lambda c: {})
