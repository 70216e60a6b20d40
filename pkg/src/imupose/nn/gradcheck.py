"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClnModel, batch_cross_entropy, model_forward, model_loss_and_grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(model: ClnModel, x: np.ndarray, label_idx: np.ndarray,
                   tolerance: float = 1e-4, step: float = 1e-5,
                   dropout_seed: int = 0, kernels=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Every parameter element is perturbed by +-step; the dropout mask is held
    fixed by reseeding each forward. Relative error per element is
    |analytic - fd| / max(1, |analytic|).
    """
    x = np.asarray(x, dtype=np.float64)
    label_idx = np.asarray(label_idx, dtype=np.intp)

    def loss() -> float:
        probs, _ = model_forward(model, x, train=True, rng=dropout_seed, kernels=kernels)
        return batch_cross_entropy(probs, label_idx)

    _, grads = model_loss_and_grads(model, x, label_idx, rng=dropout_seed, kernels=kernels)
    per_param: dict[str, float] = {}
    worst = ("", -1.0)
    for name, p in model.params.items():
        g = grads[name]
        worst_here = 0.0
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss()
            flat[j] = orig - step
            down = loss()
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(gflat[j] - fd) / max(1.0, abs(gflat[j]))
            if rel > worst_here:
                worst_here = rel
        per_param[name] = worst_here
        if worst_here > worst[1]:
            worst = (name, worst_here)
    return GradCheckReport(max_rel_error=worst[1], worst_param=worst[0],
                           per_param=per_param, tolerance=tolerance)
