"""Central finite differences against the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from mtlcoder import tensor as tn
from mtlcoder.tensor import Tensor

STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def numeric_grads(f: Callable[[Sequence[np.ndarray]], float], arrays: Sequence[np.ndarray], step: float = STEP):
    out = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][idx] += step
            minus[i][idx] -= step
            g[idx] = (f(plus) - f(minus)) / (2 * step)
        out.append(g)
    return out


def analytic_grads(build: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray]):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    grads = tn.backward(loss, {str(i): t for i, t in enumerate(leaves)})
    return [grads[str(i)] for i in range(len(leaves))]


def max_violation(analytic, numeric) -> float:
    """Largest ``|a - n| - (floor + rel * max(|a|, |n|))``; <= 0 means within tolerance."""
    worst = -np.inf
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        bound = ABS_FLOOR + REL_TOL * np.maximum(np.abs(a), np.abs(n))
        worst = max(worst, float(np.max(np.abs(a - n) - bound)))
    return worst


def check(build: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray], sign: float = 1.0) -> float:
    """Violation of the engine's gradient of ``build`` at ``arrays`` (scalar output).

    ``sign=-1`` compares against the negated numeric gradient, the oracle
    for graphs that pass through a gradient reversal.
    """
    f = lambda xs: float(build([Tensor(x) for x in xs]).data)
    return max_violation(analytic_grads(build, arrays), [sign * g for g in numeric_grads(f, arrays)])
