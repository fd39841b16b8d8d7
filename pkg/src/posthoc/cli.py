"""Command-line entry point. Every subcommand prints one JSON document.

Exit status: 0 on success, 1 on a domain or validation error (including
usage errors), 2 on a file-format error. ``POSTHOC_THREADS`` caps the BLAS
thread pool.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .calibrate import FitOptions, apply_temperature, fit_temperature
from .diagnostics import CurvePair, curve_pair, detect_reversal
from .errors import FormatError, PosthocError, ValidationError
from .store import (load_checkpoint, load_eval_table, load_store, save_checkpoint,
                    save_eval_table)
from .report import report_all, store_clean_labels, store_evaluator
from .transforms import KINDS, SwaState, ensemble_logits, swa_update

CONVENTIONS = {
    "row_reduction": "sequential left-to-right sum in float64, divided by N",
    "run_reduction": "members combined in ascending run id order",
    "ties": "lowest class index for argmax; earliest checkpoint index for selection",
    "float_digits": 9,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def round_floats(obj, digits: int = 9):
    if isinstance(obj, float):
        return obj if not math.isfinite(obj) else float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    return obj


def dumps(doc) -> str:
    return json.dumps(round_floats(doc), sort_keys=False)


def envelope(command: str, inputs: dict, result) -> dict:
    return {"command": command, "inputs": inputs, "result": result,
            "engine_version": __version__, "conventions": CONVENTIONS}


def _fit_opts(args) -> FitOptions:
    return FitOptions(beta_min=args.beta_min, beta_max=args.beta_max)


# -- subcommands -------------------------------------------------------------------

def cmd_fit_temp(args):
    fit = fit_temperature(load_eval_table(args.bundle), _fit_opts(args))
    return fit.to_json()


def cmd_apply_temp(args):
    table = apply_temperature(load_eval_table(args.bundle), args.tau)
    save_eval_table(table, args.output)
    return {"output": str(args.output), "tau": args.tau, "n": table.n, "c": table.c}


def cmd_ensemble(args):
    tables = [load_eval_table(p) for p in args.bundles]
    if args.temps:
        temps = [float(x) for x in args.temps.split(",")]
    else:
        temps = [1.0] * len(tables)
    out = ensemble_logits(tables, temps)
    save_eval_table(out, args.output)
    return {"output": str(args.output), "members": len(tables), "temps": temps,
            "n": out.n, "c": out.c}


def cmd_swa(args):
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise ValidationError(f"{run_dir} is not a run directory")
    stems = []
    for manifest in run_dir.glob("ckpt-*.json"):
        try:
            idx = float(manifest.stem[len("ckpt-"):])
        except ValueError:
            continue
        if idx <= args.upto:
            stems.append((idx, manifest.with_suffix("")))
    if not stems:
        raise ValidationError(f"empty prefix: no checkpoints in {run_dir} with index <= {args.upto:g}")
    state = SwaState()
    for _, stem in sorted(stems):
        state = swa_update(state, load_checkpoint(stem))
    save_checkpoint(state.mean, args.output)
    return {"output": str(args.output), "count": state.count,
            "indices": [i for i, _ in sorted(stems)], "total_elems": state.mean.total_elems}


def cmd_curves(args):
    store = load_store(args.store)
    evaluator = store_evaluator(store, Path(args.store)) if args.transform.startswith("SWA") else None
    clean = None
    if args.metric == "clean_error":
        clean = store_clean_labels(store, args.split)
        if clean is None:
            raise ValidationError("clean_error needs a synthetic store with known clean labels")
    pair = curve_pair(store, args.transform, args.metric, evaluator, args.split,
                      opts=_fit_opts(args), convention=args.convention, clean_labels=clean)
    return pair.to_json()


def cmd_detect_reversal(args):
    try:
        doc = json.loads(Path(args.curves).read_text())
    except ValueError as exc:
        raise FormatError(f"{args.curves}: not valid JSON ({exc})") from exc
    if "result" in doc and "indices" not in doc:
        doc = doc["result"]
    return detect_reversal(CurvePair.from_json(doc)).to_json()


def cmd_select(args):
    from . import selection as sel
    store = load_store(args.store)
    evaluator = store_evaluator(store, Path(args.store))
    opts = _fit_opts(args)
    runs = [args.run] if args.run is not None else store.runs
    if args.strategy == "swa-ts":
        reports = [sel.posthoc_select_swa_ts(store, r, args.metric, evaluator, opts) for r in runs]
        return {"reports": [r.to_json() for r in reports]}
    if args.strategy == "naive":
        if len(runs) == 1:
            rep = sel.naive_swa_ts(store, runs[0], args.metric, evaluator, opts)
        else:
            rep = sel.naive_swa_ens_ts(store, runs, args.metric, evaluator, opts)
    elif args.strategy == "swa-ens-ts":
        rep = sel.posthoc_select_swa_ens_ts(store, runs, args.metric, evaluator, opts)
    else:
        rep = sel.hybrid_select(store, runs, args.metric, evaluator, opts)
    return rep.to_json()


def cmd_report(args):
    return report_all(args.store, metrics=args.metric, opts=_fit_opts(args))


def cmd_synth_run(args):
    from .synth.experiment import config_for, make_data, run_ensemble_experiment
    cfg = config_for(args.preset, epochs=args.epochs, seed=args.seed, hidden=args.hidden,
                     ckpt_interval=args.ckpt_interval, lr=args.lr)
    data = make_data(args.seed, noise_rate=args.noise_rate)
    exp = run_ensemble_experiment(args.models, data, cfg, out_dir=args.out)
    return {"out": str(args.out), "runs": exp.store.runs,
            "indices": exp.store.indices(1), "config": exp.store.meta["synth"]["config"]}


def cmd_synth_surface(args):
    import numpy as np
    from .calibrate import fit_temperature as fit
    from .synth.mlp import mlp_forward
    from .synth.raster import render_decision_surface, save_pgm
    store = load_store(args.store)
    runs = store.runs if args.ensemble else [args.run]
    dtype = store.meta.get("synth", {}).get("config", {}).get("dtype", "float64")
    members = []
    for r in runs:
        ckpt = store.checkpoint(r, args.index)
        tau = fit(store.table(r, args.index, "val")).tau if args.ensemble else 1.0
        members.append((ckpt, tau))

    def predict(points):
        acc = np.zeros((len(points), 2))
        for ckpt, tau in members:
            acc += mlp_forward(ckpt, points, dtype) / tau
        return np.argmax(acc, axis=1)

    grid = render_decision_surface(predict, args.bounds, args.resolution)
    save_pgm(grid, args.output)
    return {"output": str(args.output), "resolution": args.resolution,
            "runs": runs, "index": args.index, "class_fraction": float(grid.mean())}


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posthoc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_fit(sp):
        sp.add_argument("--beta-min", type=float, default=1e-3)
        sp.add_argument("--beta-max", type=float, default=1e3)
        return sp

    sp = with_fit(sub.add_parser("fit-temp", help="fit a temperature on one eval bundle"))
    sp.add_argument("bundle")
    sp.set_defaults(func=cmd_fit_temp)

    sp = sub.add_parser("apply-temp", help="divide the logits of a bundle by tau")
    sp.add_argument("bundle")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_apply_temp)

    sp = sub.add_parser("ensemble", help="average temperature-scaled logits")
    sp.add_argument("bundles", nargs="+")
    sp.add_argument("--temps", help="comma-separated member temperatures")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("swa", help="average the checkpoints of a run up to an index")
    sp.add_argument("--run", required=True, help="run directory holding ckpt-<index> files")
    sp.add_argument("--upto", type=float, required=True)
    sp.add_argument("-o", "--output", required=True, help="output stem")
    sp.set_defaults(func=cmd_swa)

    sp = with_fit(sub.add_parser("curves", help="base and post-hoc curves of a store"))
    sp.add_argument("store")
    sp.add_argument("--transform", choices=KINDS, default="SWA_TS")
    sp.add_argument("--metric", choices=("error", "loss", "perplexity", "clean_error"),
                    default="error")
    sp.add_argument("--split", default="test")
    sp.add_argument("--convention", choices=("latest", "prefix_mean"), default="latest")
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("detect-reversal", help="find reversal witnesses in a curves JSON")
    sp.add_argument("curves")
    sp.set_defaults(func=cmd_detect_reversal)

    sp = with_fit(sub.add_parser("select", help="checkpoint selection"))
    sp.add_argument("store")
    sp.add_argument("--strategy", choices=("naive", "swa-ts", "swa-ens-ts", "hybrid"),
                    default="swa-ens-ts")
    sp.add_argument("--metric", choices=("loss", "error"), default="loss")
    sp.add_argument("--run", type=int)
    sp.set_defaults(func=cmd_select)

    sp = with_fit(sub.add_parser("report", help="curves, reversals and selections for a store"))
    sp.add_argument("store")
    sp.add_argument("--metric", action="append", choices=("loss", "error"))
    sp.set_defaults(func=cmd_report)

    synth = sub.add_parser("synth", help="synthetic spirals experiment")
    ssub = synth.add_subparsers(dest="synth_command", parser_class=_Parser)
    sp = ssub.add_parser("run", help="train MLPs and write a store")
    sp.add_argument("--models", type=int, default=16)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--preset", choices=("full", "desk"), default="full")
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--ckpt-interval", type=int)
    sp.add_argument("--noise-rate", type=float, default=0.2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_run)
    sp = ssub.add_parser("surface", help="write a decision surface as PGM")
    sp.add_argument("store")
    sp.add_argument("--index", type=float, required=True)
    sp.add_argument("--run", type=int, default=1)
    sp.add_argument("--ensemble", action="store_true", help="ensemble all runs")
    sp.add_argument("--bounds", type=float, nargs=4, default=(-1.2, 1.2, -1.2, 1.2),
                    metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    sp.add_argument("--resolution", type=int, default=256)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_synth_surface)
    return p


def _inputs(args) -> dict:
    skip = {"func", "command", "synth_command"}
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(args).items() if k not in skip}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    threads = os.environ.get("POSTHOC_THREADS")
    command = args.command if args.command != "synth" else f"synth {args.synth_command}"
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                result = args.func(args)
        else:
            result = args.func(args)
    except FormatError as exc:
        print(f"posthoc {command}: format error: {exc}", file=sys.stderr)
        return 2
    except (PosthocError, ValueError) as exc:
        print(f"posthoc {command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"posthoc {command}: {exc}", file=sys.stderr)
        return 2
    print(dumps(envelope(command, _inputs(args), result)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
