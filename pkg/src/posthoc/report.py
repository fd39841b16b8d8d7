"""One-shot summary of a store: curves, reversals and selection comparisons."""

from __future__ import annotations

from pathlib import Path

from . import selection as sel
from .calibrate import FitOptions
from .diagnostics import curve_pair, detect_reversal
from .errors import PosthocError
from .store import load_store
from .transforms import BundleEvaluator

SINGLE = ("TS", "SWA", "SWA_TS")
MULTI = ("Ens", "SWA_Ens_TS")


def store_evaluator(store, root):
    """Evaluator for averaged checkpoints: rebuilt MLP data for synthetic stores, bundles otherwise."""
    if "synth" in store.meta:
        from .synth.experiment import evaluator_from_meta
        return evaluator_from_meta(store.meta)
    return BundleEvaluator(root)


def store_clean_labels(store, split):
    from .synth.experiment import clean_labels_from_meta
    return clean_labels_from_meta(store.meta, split)


def report_all(store_dir, metrics=None, opts: FitOptions | None = None,
               split: str = "test") -> dict:
    """Curves for every transform, reversal per (transform, metric) and a
    naive / post-hoc / hybrid selection table.

    Synthetic stores also get ``clean_error`` curves, scored against the
    labels before flipping. Ensemble rows are omitted for single-run stores. Weight-averaging rows
    that cannot be evaluated (no checkpoints or no averaged-model bundles) are
    reported under ``"skipped"`` with the reason.
    """
    root = Path(store_dir)
    store = load_store(root)
    evaluator = store_evaluator(store, root)
    metrics = list(metrics or ("loss", "error"))
    kinds = SINGLE + (MULTI if len(store.runs) > 1 else ())
    clean = store_clean_labels(store, split)
    curve_metrics = metrics + (["clean_error"] if clean is not None else [])

    curves, reversals, skipped = [], [], []
    for kind in kinds:
        for metric in curve_metrics:
            try:
                pair = curve_pair(store, kind, metric, evaluator if "SWA" in kind else None,
                                  split, opts=opts, clean_labels=clean)
            except PosthocError as exc:
                skipped.append({"transform": kind, "metric": metric, "reason": str(exc)})
                continue
            curves.append(pair.to_json())
            rev = detect_reversal(pair) if len(pair.indices) >= 2 else None
            reversals.append({"transform": kind, "metric": metric,
                              **(rev.to_json() if rev else {"reversed": False,
                                                           "witnesses": [], "count": 0})})

    selections = []
    for metric in metrics:
        try:
            for run in store.runs:
                naive = sel.naive_swa_ts(store, run, metric, evaluator, opts)
                post = sel.posthoc_select_swa_ts(store, run, metric, evaluator, opts)
                selections.append(_row("SWA_TS", metric, naive, post, run=run))
            if len(store.runs) > 1:
                naive = sel.naive_swa_ens_ts(store, None, metric, evaluator, opts)
                post = sel.posthoc_select_swa_ens_ts(store, None, metric, evaluator, opts)
                hybrid = sel.hybrid_select(store, None, metric, evaluator, opts)
                row = _row("SWA_Ens_TS", metric, naive, post)
                row["hybrid"] = hybrid.to_json()
                selections.append(row)
        except PosthocError as exc:
            skipped.append({"selection": metric, "reason": str(exc)})

    return {"store": str(root), "runs": store.runs, "split": split,
            "curves": curves, "reversals": reversals, "selections": selections,
            "skipped": skipped}


def _row(transform, metric, naive, post, run=None):
    row = {"transform": transform, "metric": metric,
           "naive": naive.to_json(), "posthoc": post.to_json(),
           "posthoc_better_on_test": post.test_metric.value < naive.test_metric.value}
    if run is not None:
        row["run"] = run
    return row
