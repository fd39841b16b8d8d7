import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from posthoc.errors import FormatError, ValidationError
from posthoc.store import (CheckpointTensors, EvalTable, RunStore, format_index, load_store,
                           read_checkpoint, read_eval_table, save_store, write_checkpoint,
                           write_eval_table)


def bundle(n, c, logits, labels, magic=b"PHEVAL01"):
    return (magic + struct.pack("<II", n, c) + struct.pack(f"<{n * c}f", *logits)
            + struct.pack(f"<{n}I", *labels))


def test_read_minimal_bundle():
    t = read_eval_table(bundle(1, 2, [0.0, 0.0], [0]))
    assert (t.n, t.c) == (1, 2)
    assert t.logits.tolist() == [[0.0, 0.0]]
    assert t.labels.tolist() == [0]


@pytest.mark.parametrize("n,c,size", [(1, 2, 28), (3, 4, 76)])
def test_bundle_size(n, c, size):
    t = EvalTable(np.zeros((n, c)), np.zeros(n, dtype=int))
    assert len(write_eval_table(t)) == size


def test_label_out_of_range_rejected():
    with pytest.raises(ValidationError):
        read_eval_table(bundle(1, 3, [0.0, 0.0, 0.0], [5]))


def test_bad_magic_and_trailing_bytes():
    with pytest.raises(FormatError):
        read_eval_table(bundle(1, 2, [0.0, 0.0], [0], magic=b"PHEVAL02"))
    with pytest.raises(FormatError):
        read_eval_table(bundle(1, 2, [0.0, 0.0], [0]) + b"\x00")
    with pytest.raises(FormatError):
        read_eval_table(bundle(1, 2, [0.0, 0.0], [0])[:-1])


def test_non_finite_logit_rejected():
    with pytest.raises(ValidationError):
        read_eval_table(bundle(1, 2, [float("nan"), 0.0], [0]))
    with pytest.raises(ValidationError):
        EvalTable([[np.inf, 0.0]], [0])


def test_invariants_on_construction():
    with pytest.raises(ValidationError):
        EvalTable(np.zeros((2, 1)), [0, 0])
    with pytest.raises(ValidationError):
        EvalTable(np.zeros((0, 2)), [])


f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@st.composite
def eval_tables(draw):
    n = draw(st.integers(1, 12))
    c = draw(st.integers(2, 6))
    logits = draw(hnp.arrays(np.float32, (n, c), elements=f32))
    labels = draw(hnp.arrays(np.int64, n, elements=st.integers(0, c - 1)))
    return EvalTable(logits.astype(np.float64), labels)


@given(eval_tables())
@settings(max_examples=200, deadline=None)
def test_eval_roundtrip(t):
    data = write_eval_table(t)
    back = read_eval_table(data)
    assert back == t
    assert write_eval_table(back) == data


def test_encoding_narrows_round_to_nearest_even():
    # 1 + 2^-24 lies halfway between 1 and the next float32; ties go to even (1.0)
    t = EvalTable([[1 + 2.0 ** -24, 0.0]], [0])
    assert read_eval_table(write_eval_table(t)).logits[0, 0] == 1.0


def test_float32_overflow_rejected_on_write():
    with pytest.raises(ValidationError):
        write_eval_table(EvalTable([[1e39, 0.0]], [0]))


def test_checkpoint_decode_single_tensor():
    manifest = json.dumps({"tensors": [{"name": "w", "shape": [2], "offset_elems": 0}],
                           "total_elems": 2}).encode()
    ck = read_checkpoint(manifest, struct.pack("<2f", 1.0, 3.0))
    assert ck["w"].tolist() == [1.0, 3.0]


def test_checkpoint_blob_length_mismatch():
    manifest = json.dumps({"tensors": [{"name": "w", "shape": [4], "offset_elems": 0}],
                           "total_elems": 4}).encode()
    with pytest.raises(FormatError):
        read_checkpoint(manifest, b"\x00" * 12)


def test_checkpoint_overlap_and_range():
    blob = b"\x00" * 16
    overlap = {"tensors": [{"name": "a", "shape": [3], "offset_elems": 0},
                           {"name": "b", "shape": [2], "offset_elems": 2}], "total_elems": 4}
    outside = {"tensors": [{"name": "a", "shape": [3], "offset_elems": 2}], "total_elems": 4}
    for doc in (overlap, outside):
        with pytest.raises(FormatError):
            read_checkpoint(json.dumps(doc).encode(), blob)


def test_checkpoint_encode_offsets():
    manifest, blob = write_checkpoint(CheckpointTensors({"w": [1.0, 3.0]}))
    doc = json.loads(manifest)
    assert len(blob) == 8
    assert doc["tensors"][0]["offset_elems"] == 0 and doc["total_elems"] == 2

    manifest, blob = write_checkpoint(CheckpointTensors({"a": np.zeros(2), "b": np.ones(3)}))
    doc = json.loads(manifest)
    assert doc["tensors"][1]["offset_elems"] == 2 and doc["total_elems"] == 5

    manifest, blob = write_checkpoint(CheckpointTensors({}))
    assert json.loads(manifest)["total_elems"] == 0 and blob == b""


@st.composite
def checkpoints(draw):
    k = draw(st.integers(0, 4))
    names = draw(st.lists(st.text("abcxyz_", min_size=1, max_size=5), min_size=k, max_size=k,
                          unique=True))
    out = {}
    for name in names:
        shape = draw(st.lists(st.integers(0, 3), max_size=3))
        out[name] = draw(hnp.arrays(np.float32, shape, elements=f32)).astype(np.float64)
    return CheckpointTensors(out)


@given(checkpoints())
@settings(max_examples=150, deadline=None)
def test_checkpoint_roundtrip(ck):
    manifest, blob = write_checkpoint(ck)
    back = read_checkpoint(manifest, blob)
    assert back == ck
    assert write_checkpoint(back) == (manifest, blob)


def test_checkpoint_invariants():
    with pytest.raises(ValidationError):
        CheckpointTensors([("w", [1.0]), ("w", [2.0])])
    with pytest.raises(ValidationError):
        CheckpointTensors({"w": [np.nan]})


def _table(n=4, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return EvalTable(rng.normal(size=(n, c)).astype(np.float32), rng.integers(0, c, n))


def test_runstore_shape_agreement_enforced():
    store = RunStore()
    store.add(1, 1, {"val": _table(4, 3)})
    with pytest.raises(ValidationError):
        store.add(1, 2, {"val": _table(5, 3)})
    with pytest.raises(ValidationError):
        store.add(1, 0.5, {"val": _table(4, 3)})  # not increasing
    with pytest.raises(ValidationError):
        store.add(0, 1, {})
    with pytest.raises(ValidationError):
        store.add(2, -1.0, {})


def test_common_indices_truncates_to_shared_prefix():
    store = RunStore()
    for t in (1, 2, 3):
        store.add(1, t, {})
    for t in (1, 2):
        store.add(2, t, {})
    assert store.common_indices() == [1.0, 2.0]


def test_format_index():
    assert format_index(10) == "10"
    assert format_index(0.7) == "0.7"
    assert format_index(12.25) == "12.25"


def test_store_directory_roundtrip(tmp_path):
    store = RunStore()
    for run in (1, 2):
        for i, t in enumerate((0.7, 1.4, 2.1)):
            ck = CheckpointTensors({"w": np.full(3, run + i, dtype=np.float32)})
            store.add(run, t, {"val": _table(seed=run * 10 + i), "test": _table(seed=i)}, ck)
    store.meta = {"note": "x"}
    save_store(store, tmp_path)
    assert (tmp_path / "run-1" / "val-0.7.phe").exists()
    assert (tmp_path / "run-2" / "ckpt-2.1.json").exists()
    back = load_store(tmp_path)
    assert back.runs == [1, 2]
    assert back.indices(1) == [0.7, 1.4, 2.1]
    assert back.table(2, 1.4, "val") == store.table(2, 1.4, "val")
    assert back.checkpoint(2, 2.1) == store.checkpoint(2, 2.1)
    assert back.meta == {"note": "x"}


def test_missing_slot_named():
    store = RunStore()
    store.add(1, 1, {"val": _table()})
    with pytest.raises(ValidationError, match="run 1, index 1: missing checkpoint"):
        store.checkpoint(1, 1)
    with pytest.raises(ValidationError, match="test"):
        store.table(1, 1, "test")
