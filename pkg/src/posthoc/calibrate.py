"""Temperature scaling fitted by Newton's method on the inverse temperature.

With ``beta = 1 / tau`` the validation objective

    L(beta) = mean_i [ logsumexp(beta * z_i) - beta * z_i[y_i] ]

has derivatives

    L'(beta)  = mean_i [ E_s[z_i] - z_i[y_i] ]
    L''(beta) = mean_i [ Var_s[z_i] ]

where ``s = softmax(beta * z_i)``. L'' is a mean of variances, so L is convex
in beta and Newton's method converges once kept inside a sign bracket.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .metrics import logsumexp_rows
from .store import EvalTable


@dataclass(frozen=True)
class FitOptions:
    beta_min: float = 1e-3
    beta_max: float = 1e3
    grad_tol: float = 1e-10
    max_iters: int = 100

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValidationError("need 0 < beta_min < beta_max")
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ValidationError("grad_tol and max_iters must be positive")


@dataclass(frozen=True)
class TemperatureFit:
    tau: float
    beta: float
    val_loss_before: float
    val_loss_after: float
    iterations: int
    status: str  # converged | boundary_low | boundary_high | degenerate

    def to_json(self) -> dict:
        return asdict(self)


def tempered_loss(beta: float, logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of ``softmax(beta * logits)``."""
    z = beta * logits
    rows = logsumexp_rows(z) - z[np.arange(len(labels)), labels]
    return float(np.add.accumulate(rows)[-1] / len(rows))


def loss_derivatives(beta: float, logits: np.ndarray, labels: np.ndarray):
    """Return ``(L, L', L'')`` at ``beta``."""
    n = len(labels)
    z = beta * logits
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    s = e / denom
    lse = m[:, 0] + np.log(denom[:, 0])
    zy = logits[np.arange(n), labels]
    mean_z = (s * logits).sum(axis=1)
    var_z = (s * (logits - mean_z[:, None]) ** 2).sum(axis=1)
    loss = np.add.accumulate(lse - beta * zy)[-1] / n
    grad = np.add.accumulate(mean_z - zy)[-1] / n
    hess = np.add.accumulate(var_z)[-1] / n
    return float(loss), float(grad), float(hess)


def fit_temperature(val: EvalTable, opts: FitOptions | None = None) -> TemperatureFit:
    """Fit the temperature minimising validation cross-entropy.

    Newton iterations start at ``beta = 1``. A bracket ``[lo, hi]`` on the sign
    of L' is kept, and any Newton step leaving it is replaced by the geometric
    midpoint of the bracket. Boundary optima are reported through ``status``.
    """
    opts = opts or FitOptions()
    z, y = val.logits, val.labels
    before = tempered_loss(1.0, z, y)

    if np.all(z.max(axis=1) == z.min(axis=1)):
        return TemperatureFit(1.0, 1.0, before, before, 0, "degenerate")

    lo, hi = opts.beta_min, opts.beta_max
    _, g_hi, _ = loss_derivatives(hi, z, y)
    if g_hi <= 0:
        return _finish(hi, z, y, before, 0, "boundary_high")
    _, g_lo, _ = loss_derivatives(lo, z, y)
    if g_lo >= 0:
        return _finish(lo, z, y, before, 0, "boundary_low")

    beta = min(max(1.0, lo), hi)
    iters = 0
    while iters < opts.max_iters:
        iters += 1
        _, g, h = loss_derivatives(beta, z, y)
        if abs(g) < opts.grad_tol:
            break
        if g > 0:
            hi = beta
        else:
            lo = beta
        step = g / h if h > 0 else math.inf
        proposal = beta - step
        if not lo < proposal < hi:
            proposal = math.sqrt(lo * hi)
        if abs(proposal - beta) < 1e-12:
            beta = proposal
            break
        beta = proposal
    return _finish(beta, z, y, before, iters, "converged")


def _finish(beta, z, y, before, iters, status):
    after = tempered_loss(beta, z, y)
    if after > before and status == "converged":
        # beta = 1 is feasible, so a worse fit means the iteration stalled
        beta, after = 1.0, before
    return TemperatureFit(1.0 / beta, beta, before, after, iters, status)


def apply_temperature(t: EvalTable, tau: float) -> EvalTable:
    if not tau > 0 or not math.isfinite(tau):
        raise ValidationError(f"temperature must be positive and finite, got {tau!r}")
    return t.with_logits(t.logits * (1.0 / tau))
