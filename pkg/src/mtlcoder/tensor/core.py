"""Dense float64 tensors with a dynamically recorded reverse-mode graph.

Every differentiable operation returns a new :class:`Tensor` holding a
reference to its parents and a closure mapping the upstream gradient to one
gradient per parent. :func:`backward` walks that record in reverse
topological order. The graph is rebuilt on every forward pass, so
variable-length inputs need no special handling.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from ..errors import DimensionError, NumericError, UsageError

_grad_enabled = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array that optionally participates in autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    # operator sugar; the functions below are the real implementations
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    # a finite sum implies finite entries; only fall back to the full scan on failure
    if not math.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = parents if needs else ()
    out._backward = backward_fn if needs else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def scale(a, factor: float) -> Tensor:
    """Multiply by a constant (no gradient flows to ``factor``)."""
    a = as_tensor(a)
    factor = float(factor)
    return _make(a.data * factor, "scale", (a,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# linear algebra / structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, "matmul", (a, b), bwd)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise UsageError("concat of an empty sequence")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, "concat", ts, bwd)


def getitem(a, key) -> Tensor:
    """Basic (slice / integer) indexing."""
    a = as_tensor(a)
    try:
        data = a.data[key]
    except IndexError as exc:
        raise DimensionError(f"getitem: {exc}") from None
    data = np.array(data, dtype=np.float64)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _make(data, "getitem", (a,), bwd)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _make(data, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def gather_rows(table, index) -> Tensor:
    """Select rows ``table[index]``; gradients scatter-add back (embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows expects a matrix, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {table.shape[0]} rows")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], "gather_rows", (table,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    data = np.asarray(a.data.sum(axis=axis), dtype=np.float64)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, "sum", (a,), bwd)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise UsageError("mean over an empty axis")
    data = np.asarray(a.data.mean(axis=axis), dtype=np.float64)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(data, "mean", (a,), bwd)


def sq_frobenius(a) -> Tensor:
    """Sum of squared entries."""
    a = as_tensor(a)
    return _make(np.asarray(np.sum(a.data * a.data)), "sq_frobenius", (a,), lambda g: (2.0 * g * a.data,))


# ---------------------------------------------------------------------------
# elementwise unary


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return _make(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, "log", (a,), lambda g: (g / a.data,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


def gradient_reversal(a) -> Tensor:
    """Identity forward; multiplies the upstream gradient by -1 on the way back."""
    a = as_tensor(a)
    return _make(a.data.copy(), "gradient_reversal", (a,), lambda g: (-g,))


def lstm_cell(x, h_prev, c_prev, W, b) -> Tensor:
    """Fused LSTM step returning ``[h ; c]`` of shape ``(n, 2 * hidden)``.

    Gate blocks of ``W``/``b`` are ordered input, forget, output, candidate.
    """
    x, h_prev, c_prev, W, b = (as_tensor(t) for t in (x, h_prev, c_prev, W, b))
    hd = h_prev.shape[-1]
    if W.shape != (x.shape[1] + hd, 4 * hd) or b.shape != (4 * hd,) or c_prev.shape != h_prev.shape \
            or h_prev.shape[0] != x.shape[0]:
        raise DimensionError(
            f"lstm_cell: x={x.shape} h={h_prev.shape} c={c_prev.shape} W={W.shape} b={b.shape}"
        )
    xh = np.concatenate([x.data, h_prev.data], axis=1)
    z = xh @ W.data + b.data
    gates = _sigmoid_np(z[:, : 3 * hd])
    i, f, o = gates[:, :hd], gates[:, hd : 2 * hd], gates[:, 2 * hd :]
    g = np.tanh(z[:, 3 * hd :])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc

    def bwd(grad):
        dh, dc = grad[:, :hd], grad[:, hd:]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev.data * f * (1.0 - f), dh * tc * o * (1.0 - o), dc * i * (1.0 - g * g)],
            axis=1,
        )
        dxh = dz @ W.data.T
        return dxh[:, : x.shape[1]], dxh[:, x.shape[1] :], dc * f, xh.T @ dz, dz.sum(axis=0)

    return _make(np.concatenate([h, c], axis=1), "lstm_cell", (x, h_prev, c_prev, W, b), bwd)


# ---------------------------------------------------------------------------
# dispatcher

OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "scale": scale,
    "matmul": matmul,
    "transpose": transpose,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "getitem": getitem,
    "reshape": reshape,
    "gather_rows": gather_rows,
    "sum": sum,
    "mean": mean,
    "sq_frobenius": sq_frobenius,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "log": log,
    "clip": clip,
    "gradient_reversal": gradient_reversal,
    "lstm_cell": lstm_cell,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply the operation named ``kind`` (see :data:`OPS`)."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise UsageError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` get ``.grad`` set (accumulated if
    already present). When ``params`` is given, returns a name -> gradient
    map covering every entry; unreachable parameters get zeros.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        order = topological_order(loss)
        for node in reversed(order):
            if not node._parents:
                continue
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if not node._parents and id(node) in grads:
                g = grads[id(node)]
                node.grad = g if node.grad is None else node.grad + g
    if params is None:
        return {}
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out


def parameter_leaves(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and not t._parents]
