"""Parameter initializers."""

from __future__ import annotations

import math

import numpy as np

from ..errors import UsageError
from .core import Tensor


def glorot_bound(rows: int, cols: int) -> float:
    return math.sqrt(6.0 / (rows + cols))


def glorot_uniform_init(rows: int, cols: int, rng: np.random.Generator, name: str | None = None) -> Tensor:
    """Trainable ``rows x cols`` tensor drawn from U(-b, b), b = sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise UsageError(f"extents must be positive, got ({rows}, {cols})")
    bound = glorot_bound(rows, cols)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True, name=name)


def zeros_param(*shape: int, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)
