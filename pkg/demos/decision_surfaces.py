"""
Decision surfaces
=================

Writes PGM images of one network early and late in training, and of the
temperature-scaled ensemble at the late epoch, then measures how much of
the plane changes class between them.
"""

import sys
from pathlib import Path

import numpy as np

from posthoc import fit_temperature
from posthoc.synth import DESK, make_data, render_decision_surface, run_ensemble_experiment, save_pgm
from posthoc.synth.mlp import mlp_forward

out = Path(sys.argv[1] if len(sys.argv) > 1 else "surfaces")
out.mkdir(exist_ok=True)

exp = run_ensemble_experiment(8, make_data(seed=2), DESK)
store = exp.store
early, late = store.indices(1)[4], store.indices(1)[-1]
bounds = (-1.2, 1.2, -1.2, 1.2)


def single(index):
    return lambda p: np.argmax(mlp_forward(store.checkpoint(1, index), p), axis=1)


def ensemble(index):
    members = [(store.checkpoint(r, index), fit_temperature(store.table(r, index, "val")).tau)
               for r in store.runs]
    return lambda p: np.argmax(sum(mlp_forward(c, p) / tau for c, tau in members), axis=1)


grids = {}
for name, predict in [(f"single-{early:g}", single(early)), (f"single-{late:g}", single(late)),
                      (f"ensemble-{late:g}", ensemble(late))]:
    grids[name] = render_decision_surface(predict, bounds, 200)
    save_pgm(grids[name], out / f"{name}.pgm")
    print(f"{name:16s} class-1 share {grids[name].mean():.3f}")

names = list(grids)
for a, b in [(names[0], names[1]), (names[1], names[2])]:
    print(f"{a} vs {b}: disagree on {np.mean(grids[a] != grids[b]):.1%} of the plane")
print("images in", out.resolve())
