"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .layers import ReLU, Sequential


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    n_checked: int
    kink_crossings: int = 0

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def grad_check(model: Sequential, sample, target=None, h: float = 1e-4,
               tolerance: float | None = None, max_per_param: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of the MSE reconstruction loss with central
    differences, parameter tensor by parameter tensor.

    The relative error of a tensor is ``|g_analytic - g_numeric| / max(|g_a|, |g_n|)``
    in the Euclidean norm. ``max_per_param`` subsamples entries of large tensors.

    ``kink_crossings`` counts checked entries whose +h and -h evaluations
    switch some ReLU on or off. Central differences are not valid there, so
    a check is only conclusive when this count is zero.
    """
    x = np.asarray(sample, dtype=np.float64)
    y = x if target is None else np.asarray(target, dtype=np.float64)

    relus = [layer for layer in model.layers if isinstance(layer, ReLU)]

    def loss() -> float:
        return F.mse_loss(model.forward(x), y)

    def pattern() -> list:
        return [layer._cache.copy() for layer in relus]

    model.zero_grad()
    pred = model.forward(x)
    model.backward(F.mse_loss_grad(pred, y))
    rng = np.random.default_rng(seed)
    per_param = {}
    n_checked = 0
    crossings = 0
    for name, p in model.named_parameters():
        analytic = p.grad.ravel().copy()
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, max_per_param, replace=False))
        numeric = np.empty(idx.size)
        for k, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + h
            up = loss()
            up_mask = pattern()
            flat[j] = old - h
            down = loss()
            flat[j] = old
            if any(not np.array_equal(a, b) for a, b in zip(up_mask, pattern())):
                crossings += 1
            numeric[k] = (up - down) / (2 * h)
        per_param[name] = _rel(analytic[idx], numeric)
        n_checked += idx.size
    model._recorded = False
    for layer in model.layers:
        layer._cache = None
    model.zero_grad()
    worst = max(per_param.values()) if per_param else 0.0
    report = GradCheckReport(worst, per_param, n_checked, crossings)
    if tolerance is not None and not report.ok(tolerance):
        bad = {k: v for k, v in per_param.items() if v >= tolerance}
        raise AssertionError(f"gradient check failed: {bad}")
    return report
