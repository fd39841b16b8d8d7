"""Containers and binary codecs for evaluation tables and weight checkpoints.

Two on-disk formats are used:

* eval bundle (``.phe``): ``b"PHEVAL01"``, u32 N, u32 C, N*C float32 logits in
  row-major order, N u32 labels. Everything little-endian.
* checkpoint: a JSON manifest ``{"tensors": [{"name", "shape", "offset_elems"}],
  "total_elems"}`` next to a blob of ``total_elems`` little-endian float32 values.

Values are held in memory as float64; encoding narrows to float32 with
round-to-nearest-even (numpy's ``astype``) and decoding widens exactly.
"""

from __future__ import annotations

import json
import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Union

import numpy as np

from .errors import FormatError, ValidationError

EVAL_MAGIC = b"PHEVAL01"
_HEADER = struct.Struct("<8sII")
_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


@dataclass(frozen=True, eq=False)
class EvalTable:
    """Logits (N x C) and integer labels for one split of one checkpoint."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64, copy=True)
        labels = np.array(self.labels, copy=True)
        if logits.ndim != 2:
            raise ValidationError(f"logits must be 2-D, got shape {logits.shape}")
        n, c = logits.shape
        if n < 1:
            raise ValidationError("eval table needs at least one row")
        if c < 2:
            raise ValidationError(f"eval table needs at least 2 classes, got {c}")
        if labels.shape != (n,):
            raise ValidationError(f"labels shape {labels.shape} does not match {n} rows")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= c:
            raise ValidationError(f"labels must lie in [0, {c}), got range "
                                  f"[{labels.min()}, {labels.max()}]")
        if not np.all(np.isfinite(logits)):
            raise ValidationError("logits contain non-finite values")
        logits.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def c(self) -> int:
        return self.logits.shape[1]

    def predictions(self) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.logits, axis=1)

    def with_logits(self, logits) -> "EvalTable":
        return EvalTable(logits, self.labels)

    def with_labels(self, labels) -> "EvalTable":
        return EvalTable(self.logits, labels)

    def __eq__(self, other):
        if not isinstance(other, EvalTable):
            return NotImplemented
        return (self.logits.shape == other.logits.shape
                and np.array_equal(self.logits, other.logits)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


def write_eval_table(table: EvalTable) -> bytes:
    if not isinstance(table, EvalTable):
        raise ValidationError("expected an EvalTable")
    header = _HEADER.pack(EVAL_MAGIC, table.n, table.c)
    with np.errstate(over="ignore"):
        narrowed = table.logits.astype(_F32)
    if not np.all(np.isfinite(narrowed)):
        raise ValidationError("logits overflow float32 storage")
    return header + narrowed.tobytes(order="C") + table.labels.astype(_U32).tobytes()


def read_eval_table(data: bytes) -> EvalTable:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise FormatError("eval bundle truncated before end of header")
    magic, n, c = _HEADER.unpack_from(data)
    if magic != EVAL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EVAL_MAGIC!r}")
    expected = _HEADER.size + 4 * n * c + 4 * n
    if len(data) != expected:
        raise FormatError(f"eval bundle for N={n}, C={c} must be {expected} bytes, "
                          f"got {len(data)}")
    off = _HEADER.size
    logits = np.frombuffer(data, dtype=_F32, count=n * c, offset=off).reshape(n, c)
    labels = np.frombuffer(data, dtype=_U32, count=n, offset=off + 4 * n * c)
    return EvalTable(logits.astype(np.float64), labels.astype(np.int64))


@dataclass(frozen=True, eq=False)
class CheckpointTensors:
    """Named weight tensors of one checkpoint, in insertion order."""

    tensors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        items = self.tensors.items() if isinstance(self.tensors, Mapping) else self.tensors
        out = {}
        for name, arr in items:
            if not isinstance(name, str):
                raise ValidationError(f"tensor names must be strings, got {name!r}")
            if name in out:
                raise ValidationError(f"duplicate tensor name {name!r}")
            arr = np.array(arr, dtype=np.float64, copy=True)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"tensor {name!r} contains non-finite values")
            arr.setflags(write=False)
            out[name] = arr
        object.__setattr__(self, "tensors", out)

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def total_elems(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    def schema(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, v.shape) for k, v in self.tensors.items()]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def __eq__(self, other):
        if not isinstance(other, CheckpointTensors):
            return NotImplemented
        return (self.schema() == other.schema()
                and all(np.array_equal(self[k], other[k]) for k in self))

    __hash__ = None


def write_checkpoint(ckpt: CheckpointTensors) -> tuple[bytes, bytes]:
    """Encode a checkpoint as (manifest JSON bytes, float32 blob bytes)."""
    entries = []
    offset = 0
    chunks = []
    for name, arr in ckpt.tensors.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset_elems": offset})
        offset += int(arr.size)
        with np.errstate(over="ignore"):
            chunks.append(arr.astype(_F32).ravel().tobytes())
    blob = b"".join(chunks)
    if not np.all(np.isfinite(np.frombuffer(blob, dtype=_F32))):
        raise ValidationError("checkpoint values overflow float32 storage")
    manifest = json.dumps({"tensors": entries, "total_elems": offset}, separators=(",", ":"))
    return manifest.encode("utf-8"), blob


def read_checkpoint(manifest: bytes, blob: bytes) -> CheckpointTensors:
    try:
        doc = json.loads(manifest)
        entries = doc["tensors"]
        total = int(doc["total_elems"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint manifest: {exc}") from exc
    if total < 0:
        raise FormatError("total_elems must be non-negative")
    if len(blob) != 4 * total:
        raise FormatError(f"blob holds {len(blob)} bytes but manifest declares "
                          f"{total} elements ({4 * total} bytes)")
    values = np.frombuffer(bytes(blob), dtype=_F32)
    spans = []
    tensors = {}
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(d) for d in entry["shape"])
            start = int(entry["offset_elems"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed tensor entry {entry!r}") from exc
        if any(d < 0 for d in shape) or start < 0:
            raise FormatError(f"tensor {name!r}: negative shape or offset")
        size = math.prod(shape)
        if start + size > total:
            raise FormatError(f"tensor {name!r} spans [{start}, {start + size}) beyond "
                              f"total_elems={total}")
        spans.append((start, start + size, name))
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        tensors[name] = values[start:start + size].astype(np.float64).reshape(shape)
    end, last = 0, None
    for start, stop, name in sorted(s for s in spans if s[1] > s[0]):
        if start < end:
            raise FormatError(f"tensors {last!r} and {name!r} overlap")
        end, last = stop, name
    try:
        return CheckpointTensors(tensors)
    except ValidationError as exc:
        raise FormatError(str(exc)) from exc


def save_checkpoint(ckpt: CheckpointTensors, stem: Union[str, os.PathLike]) -> None:
    """Write ``<stem>.json`` and ``<stem>.f32``."""
    stem = Path(stem)
    manifest, blob = write_checkpoint(ckpt)
    stem.with_name(stem.name + ".json").write_bytes(manifest)
    stem.with_name(stem.name + ".f32").write_bytes(blob)


def load_checkpoint(stem: Union[str, os.PathLike]) -> CheckpointTensors:
    stem = Path(stem)
    manifest = stem.with_name(stem.name + ".json")
    blob = stem.with_name(stem.name + ".f32")
    try:
        return read_checkpoint(manifest.read_bytes(), blob.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{manifest}: {exc}") from exc


def save_eval_table(table: EvalTable, path) -> None:
    Path(path).write_bytes(write_eval_table(table))


def load_eval_table(path) -> EvalTable:
    try:
        return read_eval_table(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


# -- run store ---------------------------------------------------------------

CheckpointSource = Union[CheckpointTensors, Callable[[], CheckpointTensors]]


@dataclass
class Entry:
    checkpoint: CheckpointSource | None = None
    tables: dict[str, EvalTable] = field(default_factory=dict)

    def load_checkpoint(self) -> CheckpointTensors | None:
        if self.checkpoint is None or isinstance(self.checkpoint, CheckpointTensors):
            return self.checkpoint
        return self.checkpoint()


class RunStore:
    """Checkpoints and eval tables keyed by ``(run, index)``.

    ``run`` is an integer >= 1 and ``index`` a positive real checkpoint tag
    (fractional epochs are allowed). Checkpoints may be given lazily as a
    zero-argument callable so large stores can stay on disk.
    """

    def __init__(self):
        self._runs: dict[int, dict[float, Entry]] = {}
        self._shapes: dict[str, tuple[int, int]] = {}
        self.meta: dict = {}

    def add(self, run: int, index: float, tables: Mapping[str, EvalTable] | None = None,
            checkpoint: CheckpointSource | None = None) -> None:
        if int(run) != run or run < 1:
            raise ValidationError(f"run id must be an integer >= 1, got {run!r}")
        index = float(index)
        if not index > 0 or not math.isfinite(index):
            raise ValidationError(f"checkpoint index must be positive, got {index!r}")
        entries = self._runs.setdefault(int(run), {})
        if index in entries:
            raise ValidationError(f"run {run} already has checkpoint {index:g}")
        if entries and index < max(entries):
            raise ValidationError(f"run {run}: index {index:g} inserted after "
                                  f"{max(entries):g}; indices must increase")
        tables = dict(tables or {})
        for split, table in tables.items():
            shape = (table.n, table.c)
            known = self._shapes.setdefault(split, shape)
            if known != shape:
                raise ValidationError(f"split {split!r}: table shape {shape} at run {run}, "
                                      f"index {index:g} differs from {known}")
        entries[index] = Entry(checkpoint, tables)

    @property
    def runs(self) -> list[int]:
        return sorted(self._runs)

    def indices(self, run: int) -> list[float]:
        return sorted(self._require_run(run))

    def splits(self) -> list[str]:
        return sorted(self._shapes)

    def common_indices(self, runs=None) -> list[float]:
        """Longest shared prefix of the index grids of ``runs``."""
        runs = self.runs if runs is None else list(runs)
        grids = [self.indices(r) for r in runs]
        out = []
        for values in zip(*grids):
            if any(v != values[0] for v in values):
                break
            out.append(values[0])
        return out

    def entry(self, run: int, index: float) -> Entry:
        entries = self._require_run(run)
        try:
            return entries[float(index)]
        except KeyError:
            raise ValidationError(f"run {run} has no checkpoint at index {index:g}") from None

    def table(self, run: int, index: float, split: str) -> EvalTable:
        entry = self.entry(run, index)
        try:
            return entry.tables[split]
        except KeyError:
            raise ValidationError(f"run {run}, index {index:g}: missing {split!r} table") from None

    def checkpoint(self, run: int, index: float) -> CheckpointTensors:
        ckpt = self.entry(run, index).load_checkpoint()
        if ckpt is None:
            raise ValidationError(f"run {run}, index {index:g}: missing checkpoint")
        return ckpt

    def tables(self, run: int, split: str) -> dict[float, EvalTable]:
        return {t: self.table(run, t, split) for t in self.indices(run)}

    def _require_run(self, run):
        try:
            return self._runs[int(run)]
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"store has no run {run!r}") from None


def format_index(index: float) -> str:
    text = f"{float(index):.3f}".rstrip("0").rstrip(".")
    return text


_TABLE_RE = re.compile(r"^(?P<split>[A-Za-z_]+)-(?P<index>\d+(?:\.\d+)?)\.phe$")
_CKPT_RE = re.compile(r"^ckpt-(?P<index>\d+(?:\.\d+)?)\.json$")
_RUN_RE = re.compile(r"^run-(?P<run>\d+)$")


def save_store(store: RunStore, root) -> None:
    """Write a store as ``run-<j>/ckpt-<index>.{json,f32}`` and ``run-<j>/<split>-<index>.phe``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for run in store.runs:
        run_dir = root / f"run-{run}"
        run_dir.mkdir(exist_ok=True)
        for index in store.indices(run):
            entry = store.entry(run, index)
            tag = format_index(index)
            for split, table in entry.tables.items():
                save_eval_table(table, run_dir / f"{split}-{tag}.phe")
            ckpt = entry.load_checkpoint()
            if ckpt is not None:
                save_checkpoint(ckpt, run_dir / f"ckpt-{tag}")
    if store.meta:
        (root / "store.json").write_text(json.dumps(store.meta))


def load_store(root, lazy: bool = True) -> RunStore:
    """Read a store directory; checkpoints are loaded on demand when ``lazy``."""
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"{root} is not a directory")
    found: dict[int, dict[float, tuple[dict, Path | None]]] = {}
    for run_dir in sorted(root.iterdir()):
        m = _RUN_RE.match(run_dir.name)
        if not m or not run_dir.is_dir():
            continue
        run = int(m.group("run"))
        slots = found.setdefault(run, {})
        for path in sorted(run_dir.iterdir()):
            mt = _TABLE_RE.match(path.name)
            mc = _CKPT_RE.match(path.name)
            if mt:
                idx = float(mt.group("index"))
                slots.setdefault(idx, ({}, None))[0][mt.group("split")] = load_eval_table(path)
            elif mc:
                idx = float(mc.group("index"))
                tables, _ = slots.setdefault(idx, ({}, None))
                slots[idx] = (tables, path.with_suffix(""))
    if not found:
        raise ValidationError(f"{root} contains no run-<j> directories")
    store = RunStore()
    for run in sorted(found):
        for idx in sorted(found[run]):
            tables, stem = found[run][idx]
            ckpt = None
            if stem is not None:
                ckpt = _lazy_loader(stem) if lazy else load_checkpoint(stem)
            try:
                store.add(run, idx, tables, ckpt)
            except ValidationError as exc:
                raise ValidationError(f"{root / f'run-{run}'}: {exc}") from exc
    meta = root / "store.json"
    if meta.exists():
        store.meta = json.loads(meta.read_text())
    return store


def _lazy_loader(stem: Path):
    return lambda: load_checkpoint(stem)
