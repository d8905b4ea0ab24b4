"""Gradient verification against central finite differences.

Fragments are re-evaluated on float64 copies of their parameters (the tape
computes in whatever dtype flows through it), with a fixed step of 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import Tensor, backward, no_grad, reset_graph

__all__ = ["GradCheckReport", "grad_check"]

FD_STEP = 1e-3
_REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"max_rel_err": self.max_rel_err, "per_param": dict(self.per_param)}


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = FD_STEP,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn`` with central differences.

    ``loss_fn`` must be deterministic and build a scalar loss from the given
    parameter dict. Relative error per coordinate is
    |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-8).
    """
    shadow = {
        name: Tensor(p.data.astype(np.float64), requires_grad=True, dtype=np.float64)
        for name, p in params.items()
    }

    reset_graph()
    loss = loss_fn(shadow)
    backward(loss)
    ad_grads = {name: np.array(t.grad, dtype=np.float64, copy=True) for name, t in shadow.items()}
    for t in shadow.values():
        t.grad = None

    report = GradCheckReport(max_rel_err=0.0)
    with no_grad():
        for name, t in shadow.items():
            flat = t.data.reshape(-1)
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_fn(shadow).item()
                flat[i] = orig - step
                lo = loss_fn(shadow).item()
                flat[i] = orig
                fd[i] = (hi - lo) / (2.0 * step)
            ga = ad_grads[name].reshape(-1)
            rel = np.abs(ga - fd) / (np.abs(ga) + np.abs(fd) + _REL_FLOOR)
            worst = float(rel.max()) if rel.size else 0.0
            report.per_param[name] = worst
            report.max_rel_err = max(report.max_rel_err, worst)
    return report
