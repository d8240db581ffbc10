"""Central finite-difference gradient checking for the hand-rolled kernels.

Checks run on float64 twins of the float32 training modules: callers clone
parameters to float64, evaluate the loss analytically once to populate
gradients, then compare against (L(p + h) - L(p - h)) / 2h per element.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import Param

DEFAULT_STEP = 1e-5
DEFAULT_RTOL = 1e-4
DEFAULT_ATOL = 1e-8


@dataclass
class GradCheckReport:
    max_abs_error: float
    max_rel_error: float
    worst_param: str
    checked: int

    def ok(self, rtol: float = DEFAULT_RTOL) -> bool:
        return self.max_rel_error <= rtol


def finite_difference_grads(
    loss_fn: Callable[[], float],
    params: Sequence[Param],
    step: float = DEFAULT_STEP,
) -> list[np.ndarray]:
    """Numeric gradient of ``loss_fn`` for every element of every parameter.

    ``loss_fn`` must be pure in the parameter values: it is re-evaluated with
    perturbed entries and must not mutate any state.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + step
            up = loss_fn()
            flat_v[i] = orig - step
            down = loss_fn()
            flat_v[i] = orig
            flat_g[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def compare_grads(
    params: Sequence[Param],
    numeric: Sequence[np.ndarray],
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> GradCheckReport:
    """Compare analytic gradients (in ``param.grad``) against numeric ones.

    The per-element relative error uses max(|analytic|, |numeric|, atol) as
    denominator so exactly-zero pairs compare clean.
    """
    worst_rel = 0.0
    worst_abs = 0.0
    worst_name = ""
    checked = 0
    for p, num in zip(params, numeric):
        diff = np.abs(p.grad - num)
        denom = np.maximum(np.maximum(np.abs(p.grad), np.abs(num)), atol)
        rel = diff / denom
        checked += diff.size
        if diff.size and rel.max() > worst_rel:
            worst_rel = float(rel.max())
            worst_abs = float(diff.max())
            worst_name = p.name or "<unnamed>"
    return GradCheckReport(worst_abs, worst_rel, worst_name, checked)


def check_gradients(
    loss_fn: Callable[[], float],
    params: Sequence[Param],
    step: float = DEFAULT_STEP,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> GradCheckReport:
    """Convenience wrapper: numeric grads + comparison in one call.

    Analytic gradients must already be accumulated in ``param.grad``.
    """
    numeric = finite_difference_grads(loss_fn, params, step)
    return compare_grads(params, numeric, rtol, atol)
