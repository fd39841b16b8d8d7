import numpy as np
import pytest

from oracles import grid_search_beta

from posthoc.calibrate import apply_temperature, fit_temperature
from posthoc.errors import ValidationError
from posthoc.metrics import error_metric
from posthoc.store import CheckpointTensors, EvalTable, RunStore, save_eval_table
from posthoc.transforms import (BundleEvaluator, SwaState, TransformSpec, compose_swa_ens_ts,
                                compose_swa_ts, ens_ts_tables, ensemble_logits, swa_mean,
                                swa_prefix_tables, swa_update)


def ck(**tensors):
    return CheckpointTensors({k: np.asarray(v, dtype=float) for k, v in tensors.items()})


def test_ensemble_examples():
    a = EvalTable([[2, 0]], [0])
    b = EvalTable([[0, 2]], [0])
    assert ensemble_logits([a, a], [1, 1]) == a
    assert ensemble_logits([a, b], [1, 1]).logits.tolist() == [[1, 1]]
    assert ensemble_logits([a, b], [2, 1]).logits.tolist() == [[0.5, 1.0]]


def test_ensemble_rejects_mismatch():
    a = EvalTable([[2, 0]], [0])
    with pytest.raises(ValidationError):
        ensemble_logits([a, EvalTable([[2, 0]], [1])], [1, 1])
    with pytest.raises(ValidationError):
        ensemble_logits([a, EvalTable([[2, 0, 1]], [0])], [1, 1])
    with pytest.raises(ValidationError):
        ensemble_logits([a, a], [1])
    with pytest.raises(ValidationError):
        ensemble_logits([])


def test_ensemble_of_copies_keeps_error():
    rng = np.random.default_rng(0)
    t = EvalTable(rng.normal(size=(100, 6)), rng.integers(0, 6, 100))
    for k in (2, 3, 7):
        assert error_metric(ensemble_logits([t] * k, [1.7] * k)).value == error_metric(t).value


def test_swa_mean_examples():
    assert swa_mean([ck(w=[1, 3]), ck(w=[3, 5])])["w"].tolist() == [2, 4]
    single = ck(w=[1.5, -2])
    assert swa_mean([single]) == single
    assert swa_mean([ck(w=[0]), ck(w=[3]), ck(w=[6])])["w"].tolist() == [3]
    with pytest.raises(ValidationError):
        swa_mean([ck(w=[1]), ck(v=[1])])
    with pytest.raises(ValidationError):
        swa_mean([ck(w=[1]), ck(w=[1, 2])])


def test_swa_update_examples():
    state = swa_update(SwaState(ck(w=[2]), 2), ck(w=[5]))
    assert state.mean["w"].tolist() == [3] and state.count == 3
    state = swa_update(SwaState(), ck(w=[7]))
    assert state.mean["w"].tolist() == [7] and state.count == 1
    with pytest.raises(ValidationError):
        swa_update(state, ck(v=[1]))


def test_swa_streaming_matches_batch():
    rng = np.random.default_rng(1)
    cks = [ck(a=rng.normal(size=(3, 4)), b=rng.normal(size=5)) for _ in range(200)]
    state = SwaState()
    for c in cks:
        state = swa_update(state, c)
    batch = swa_mean(cks)
    for name in batch:
        np.testing.assert_allclose(state.mean[name], batch[name], rtol=1e-6, atol=1e-12)


def linear_evaluator(x_val, y_val, x_test, y_test):
    def evaluate(c):
        return {"val": EvalTable(x_val @ c["W"] + c["b"], y_val),
                "test": EvalTable(x_test @ c["W"] + c["b"], y_test)}
    return evaluate


def random_linear_setup(rng, k=4, d=3, c=3):
    xs = rng.normal(size=(20, d)), rng.normal(size=(15, d))
    ys = rng.integers(0, c, 20), rng.integers(0, c, 15)
    evaluate = linear_evaluator(xs[0], ys[0], xs[1], ys[1])
    members = [ck(W=rng.normal(size=(d, c)), b=rng.normal(size=c)) for _ in range(k)]
    return evaluate, members


def test_linear_model_swa_equals_logit_mean():
    rng = np.random.default_rng(4)
    evaluate, members = random_linear_setup(rng)
    swa = evaluate(swa_mean(members))["val"].logits
    mean = ensemble_logits([evaluate(m)["val"] for m in members]).logits
    np.testing.assert_allclose(swa, mean, rtol=1e-12, atol=1e-12)


def test_compose_swa_ts_single_checkpoint_is_ts():
    rng = np.random.default_rng(8)
    evaluate, members = random_linear_setup(rng, k=1)
    spec, val, test = compose_swa_ts(members, evaluate)
    tables = evaluate(members[0])
    fit = fit_temperature(tables["val"])
    assert spec.kind == "SWA_TS" and spec.member_temps == [fit.tau]
    assert val == apply_temperature(tables["val"], fit.tau)
    assert test == apply_temperature(tables["test"], fit.tau)
    with pytest.raises(ValidationError):
        compose_swa_ts([], evaluate)


def test_compose_swa_ts_degenerate_evaluator():
    def evaluate(c):
        t = EvalTable(np.ones((4, 3)), [0, 1, 2, 0])
        return {"val": t, "test": t}
    spec, val, _ = compose_swa_ts([ck(w=[0])], evaluate)
    assert spec.member_temps == [1.0]
    assert val == evaluate(None)["val"]


def test_compose_swa_ens_ts_single_run_matches_total_scale():
    rng = np.random.default_rng(9)
    evaluate, members = random_linear_setup(rng, k=3)
    spec, val, _ = compose_swa_ens_ts([members], evaluate)
    _, val_ts, _ = compose_swa_ts(members, evaluate)
    # the second temperature is a no-op when the first fit already converged
    assert spec.ensemble_temp == pytest.approx(1.0, abs=1e-6)
    raw = evaluate(swa_mean(members))["val"]
    total = spec.member_temps[0] * spec.ensemble_temp
    assert total == pytest.approx(fit_temperature(raw).tau, rel=1e-6)
    grid_beta = grid_search_beta(raw.logits, raw.labels)
    assert 1 / total == pytest.approx(grid_beta, abs=1e-3)
    np.testing.assert_allclose(val.logits, val_ts.logits, rtol=1e-6)


def test_compose_swa_ens_ts_identical_runs():
    rng = np.random.default_rng(10)
    evaluate, members = random_linear_setup(rng, k=2)
    _, val1, test1 = compose_swa_ens_ts([members], evaluate)
    _, val3, test3 = compose_swa_ens_ts([members] * 3, evaluate)
    np.testing.assert_allclose(val3.logits, val1.logits, rtol=1e-12)
    assert error_metric(test3).value == error_metric(test1).value


def test_compose_swa_ens_ts_nested_form():
    rng = np.random.default_rng(14)
    evaluate, members = random_linear_setup(rng, k=4)
    runs = [members[:2], members[2:]]
    spec, val, test = compose_swa_ens_ts(runs, evaluate)
    raw = [evaluate(swa_mean(r)) for r in runs]
    expected = sum(t["test"].logits / tau for t, tau in zip(raw, spec.member_temps)) / 2
    np.testing.assert_allclose(test.logits, expected / spec.ensemble_temp, rtol=1e-12)
    assert spec.member_temps == [fit_temperature(t["val"]).tau for t in raw]


def test_outer_temperature_never_changes_error():
    rng = np.random.default_rng(12)
    evaluate, members = random_linear_setup(rng, k=3)
    runs = [members[:2], members[1:]]
    _, _, test = compose_swa_ens_ts(runs, evaluate)
    _, _, inner = ens_ts_tables([evaluate(swa_mean(r)) for r in runs], outer=False)
    assert error_metric(test).value == error_metric(inner["test"]).value
    assert test.labels.tolist() == inner["test"].labels.tolist()


def test_transform_spec_validation():
    with pytest.raises(ValidationError):
        TransformSpec("bogus")
    with pytest.raises(ValidationError):
        TransformSpec("Ens", member_temps=[1.0], members=[(1, 1, 1), (2, 1, 1)])
    assert TransformSpec("TS", [2.0]).to_json()["member_temps"] == [2.0]


def _store_with_linear_checkpoints(rng, runs=2, steps=4):
    evaluate, _ = random_linear_setup(rng)
    store = RunStore()
    for r in range(1, runs + 1):
        for t in range(1, steps + 1):
            c = ck(W=rng.normal(size=(3, 3)), b=rng.normal(size=3))
            store.add(r, t, evaluate(c), c)
    return store, evaluate


def test_swa_prefix_tables_incremental_equals_recompute():
    rng = np.random.default_rng(13)
    store, evaluate = _store_with_linear_checkpoints(rng)
    evaluator = lambda run, index, c: evaluate(c)
    prefixes = swa_prefix_tables(store, 1, evaluator)
    for k, (index, tables) in enumerate(prefixes, start=1):
        scratch = swa_mean([store.checkpoint(1, t) for t in store.indices(1)[:k]])
        np.testing.assert_allclose(tables["val"].logits, evaluate(scratch)["val"].logits,
                                   rtol=1e-6, atol=1e-12)
    assert swa_prefix_tables(store, 1, evaluator) is prefixes  # cached


def test_swa_prefix_missing_checkpoint_named():
    store = RunStore()
    store.add(1, 1, {"val": EvalTable([[1, 0]], [0])})
    with pytest.raises(ValidationError, match="run 1, index 1: missing checkpoint"):
        swa_prefix_tables(store, 1, lambda r, i, c: {})


def test_bundle_evaluator(tmp_path):
    t = EvalTable([[1.0, 0.0]], [0])
    (tmp_path / "run-1" / "swa").mkdir(parents=True)
    save_eval_table(t, tmp_path / "run-1" / "swa" / "val-2.phe")
    save_eval_table(t, tmp_path / "run-1" / "swa" / "test-2.phe")
    ev = BundleEvaluator(tmp_path)
    assert ev(1, 2.0)["val"] == t
    with pytest.raises(ValidationError, match="val-3.phe"):
        ev(1, 3.0)
