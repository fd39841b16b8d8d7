"""
Choosing checkpoints after the transform
========================================

"""

from dataclasses import replace

import numpy as np
from scipy.stats import spearmanr

from posthoc.diagnostics import flip_rate_series, temperature_trajectory
from posthoc.selection import (MonitorState, hybrid_select, monitor_step, naive_swa_ens_ts,
                               naive_swa_ts, posthoc_select_swa_ens_ts, posthoc_select_swa_ts)
from posthoc.synth import DESK, make_data, run_ensemble_experiment
from posthoc.synth.experiment import train_predictions

exp = run_ensemble_experiment(6, make_data(seed=1), replace(DESK, seed=1))
store, ev = exp.store, exp.evaluator()

# per run: pick the epoch by the raw val error, or by the val error of SWA+TS
for r in store.runs[:3]:
    nv = naive_swa_ts(store, r, "error", ev)
    ph = posthoc_select_swa_ts(store, r, "error", ev)
    print(f"run {r}: naive epoch {nv.chosen[r]:4.0f} test err {nv.test_metric.value:.3f} | "
          f"post-hoc epoch {ph.chosen[r]:4.0f} test err {ph.test_metric.value:.3f}")

for name, rep in [("naive", naive_swa_ens_ts(store, metric="error", evaluator=ev)),
                  ("post-hoc", posthoc_select_swa_ens_ts(store, metric="error", evaluator=ev)),
                  ("hybrid", hybrid_select(store, metric="error", evaluator=ev))]:
    print(f"SWA+Ens+TS {name:8s} test error {rep.test_metric.value:.3f}  "
          f"epochs {sorted(set(rep.chosen.values()))}")

# the same choice made online, stopping once the SWA+TS val loss stalls
state = MonitorState(patience=8)
for t in store.indices(1):
    state, action = monitor_step(state, t, store.checkpoint(1, t), lambda c: ev(1, t, c))
    if action == "stop":
        break
verb = "stopped" if action == "stop" else "ran to the end,"
print(f"monitor {verb} at epoch {t:g}; best SWA+TS val loss {state.best_val:.4f} "
      f"at epoch {state.best_index:g}")

# why late checkpoints need a higher temperature, and why they flicker
taus = temperature_trajectory(store, 1)
print("tau every 100 epochs:", np.round(taus[9::10], 2).tolist())
print("Spearman(epoch, tau) =", round(spearmanr(store.indices(1), taus)[0], 3))
sub = exp.runs[1].subsample
on, off = flip_rate_series(list(train_predictions(exp, 1)[:, sub]),
                           exp.data.train.flip_mask[sub])
print(f"flip rate: mislabeled {np.mean(on):.3f}, clean {np.mean(off):.3f}")
