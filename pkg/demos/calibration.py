"""
Fitting a temperature
=====================

"""

import numpy as np

from posthoc import EvalTable, apply_temperature, error_metric, fit_temperature, loss_metric

# three rows scored [2, 0]; two say class 0, one says class 1
t = EvalTable([[2, 0]] * 3, [0, 0, 1])
fit = fit_temperature(t)
print("tau", fit.tau, "status", fit.status, "newton steps", fit.iterations)

# the optimum is where the predicted probability of class 0 is exactly 2/3
p = np.exp(2 / fit.tau) / (1 + np.exp(2 / fit.tau))
print("p(class 0) after scaling", p)

# overconfident logits: a sharp classifier whose labels are noisy
rng = np.random.default_rng(0)
z = rng.normal(size=(2000, 5)) * 6
y = np.array([rng.choice(5, p=np.exp(r - r.max()) / np.exp(r - r.max()).sum()) for r in z / 6])
val, test = EvalTable(z[:1000], y[:1000]), EvalTable(z[1000:], y[1000:])

fit = fit_temperature(val)
scaled = apply_temperature(test, fit.tau)
print(f"fitted tau {fit.tau:.3f} (the labels were drawn at tau 6)")
print(f"test loss  {loss_metric(test).value:.4f} -> {loss_metric(scaled).value:.4f}")
print(f"test error {error_metric(test).value:.4f} -> {error_metric(scaled).value:.4f}")

# separable data pushes the fit to the sharpest allowed temperature
print(fit_temperature(EvalTable([[2, 0]], [0])).to_json())
