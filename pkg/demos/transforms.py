"""
Ensembles, weight averages and their compositions
=================================================

A linear model makes the bookkeeping visible: averaging weights and
averaging logits give the same answer there, and stop agreeing as soon as
a nonlinearity is involved.
"""

import numpy as np

from posthoc import (CheckpointTensors, EvalTable, compose_swa_ens_ts, compose_swa_ts,
                     ensemble_logits, error_metric, loss_metric, swa_mean)

rng = np.random.default_rng(1)
x_val, x_test = rng.normal(size=(300, 4)), rng.normal(size=(300, 4))
w_true = rng.normal(size=(4, 3))
y_val = np.argmax(x_val @ w_true + rng.gumbel(size=(300, 3)), axis=1)
y_test = np.argmax(x_test @ w_true + rng.gumbel(size=(300, 3)), axis=1)


def linear(c):
    return {"val": EvalTable(x_val @ c["W"] + c["b"], y_val),
            "test": EvalTable(x_test @ c["W"] + c["b"], y_test)}


# a "training run" is a drift of noisy checkpoints around the true weights
def run(scale):
    return [CheckpointTensors({"W": scale * (w_true + rng.normal(0, 0.7, size=(4, 3))),
                               "b": rng.normal(0, 0.1, size=3)}) for _ in range(8)]


runs = [run(3.0), run(3.0), run(3.0)]

avg = linear(swa_mean(runs[0]))["test"]
ens = ensemble_logits([linear(c)["test"] for c in runs[0]])
print("linear model, |SWA logits - mean logits| =", np.abs(avg.logits - ens.logits).max())

single = linear(runs[0][-1])["test"]
print(f"last checkpoint  error {error_metric(single).value:.3f}  loss {loss_metric(single).value:.3f}")

spec, _, test = compose_swa_ts(runs[0], linear)
print(f"SWA+TS           error {error_metric(test).value:.3f}  loss {loss_metric(test).value:.3f}"
      f"  tau {spec.member_temps[0]:.2f}")

spec, _, test = compose_swa_ens_ts(runs, linear)
print(f"SWA+Ens+TS       error {error_metric(test).value:.3f}  loss {loss_metric(test).value:.3f}"
      f"  member taus {np.round(spec.member_temps, 2).tolist()} outer {spec.ensemble_temp:.3f}")
