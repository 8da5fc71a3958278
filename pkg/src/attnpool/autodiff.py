"""Dense-matrix reverse-mode automatic differentiation.

Everything is a 2-D float64 array: scalars are 1x1, row vectors 1xN,
column vectors Nx1. The computation graph is rebuilt on every forward
pass (define-by-run); ``backward`` on a scalar replays the recorded
operations once, in reverse order, accumulating gradients additively.

Sized for 2-3 layer graph networks on a few hundred nodes; no GPU,
no sparsity, no higher-order derivatives.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable operation recording inside the block (fast inference path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A 2-D float64 array that can participate in a gradient tape.

    ``requires_grad`` marks trainable leaves; after ``backward`` every such
    leaf reachable from the loss has ``grad`` populated with an array of
    the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_rec", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D; got array of ndim {arr.ndim}")
        if arr.size == 0:
            raise ValueError("tensors must be non-empty")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._rec: _Record | None = None
        self._backward_done = False

    @classmethod
    def column(cls, values, requires_grad: bool = False) -> "Tensor":
        arr = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        return cls(arr, requires_grad=requires_grad)

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        """Fast path for op outputs: ``data`` is already a 2-D float64 array."""
        t = object.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._rec = None
        t._backward_done = False
        return t

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; all arithmetic goes through the module-level ops.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other))

    def __sub__(self, other) -> "Tensor":
        return sub(self, _as_tensor(other))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)


class _Record:
    """One recorded operation: output, inputs, and its backward rule."""

    __slots__ = ("out", "parents", "push")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...],
                 push: Callable[[np.ndarray], None]):
        self.out = out
        self.parents = parents
        self.push = push


class Tape:
    """Ordered operation list ending at one output tensor.

    Built by tracing parent links; replaying backward visits every
    recorded operation exactly once, outputs before inputs.
    """

    __slots__ = ("ops",)

    def __init__(self, ops: list[_Record]):
        self.ops = ops

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        ops: list[_Record] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            rec = node._rec
            if rec is None:
                continue
            if expanded:
                ops.append(rec)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in rec.parents:
                stack.append((parent, False))
        return cls(ops)

    def replay_backward(self) -> None:
        for rec in reversed(self.ops):
            if rec.out.grad is not None:
                rec.push(rec.out.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _on_tape(t: Tensor) -> bool:
    return t.requires_grad or t._rec is not None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if _on_tape(t):
        # Never mutate gradient arrays in place: they may be aliased by
        # sibling inputs of the same op.
        t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          push: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor._wrap(data)
    if _grad_enabled and any(p.requires_grad or p._rec is not None for p in parents):
        out._rec = _Record(out, parents, push)
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of every trainable tensor reachable from ``loss``.

    ``loss`` must be a 1x1 tensor produced on the tape; calling twice on
    the same loss is rejected.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward requires a scalar (1x1) loss, got {loss.shape}")
    if loss._rec is None and not loss.requires_grad:
        raise ValueError("loss is not connected to any recorded operation")
    if loss._backward_done:
        raise RuntimeError("backward already called on this loss; rebuild the tape first")
    loss._backward_done = True
    loss.grad = np.ones((1, 1))
    Tape.trace(loss).replay_backward()


# ---------------------------------------------------------------------------
# Elementwise ops (shapes equal, or one operand is 1x1 / row 1xC / column Nx1)

def _broadcast_ok(sa: tuple[int, int], sb: tuple[int, int]) -> bool:
    if sa == sb or sa == (1, 1) or sb == (1, 1):
        return True
    if sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
        return True
    if sa[0] == sb[0] and (sa[1] == 1 or sb[1] == 1):
        return True
    return False


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"{opname} shape mismatch: {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] > 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] > 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def push(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), push)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def push(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), push)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def push(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), push)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a Python scalar constant."""

    def push(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), push)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def push(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), push)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive inputs; clamp_min first")

    def push(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), push)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor

    def push(g):
        _accum(a, g * mask)

    return _make(np.maximum(a.data, floor), (a,), push)


# ---------------------------------------------------------------------------
# Reductions

def tsum(a: Tensor) -> Tensor:
    def push(g):
        _accum(a, np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.data.sum()]]), (a,), push)


def tmean(a: Tensor) -> Tensor:
    size = a.data.size

    def push(g):
        _accum(a, np.full(a.shape, g[0, 0] / size))

    return _make(np.array([[a.data.mean()]]), (a,), push)


def sum_over_rows(a: Tensor) -> Tensor:
    """Column sums: (n, c) -> (1, c)."""

    def push(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=0, keepdims=True), (a,), push)


def max_over_rows(a: Tensor) -> Tensor:
    """Per-column maximum: (n, c) -> (1, c).

    The gradient routes to the first (lowest row index) argmax entry of
    each column.
    """
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.cols)

    def push(g):
        z = np.zeros(a.shape)
        z[idx, cols] = g[0]
        _accum(a, z)

    return _make(a.data[idx, cols].reshape(1, -1), (a,), push)


# ---------------------------------------------------------------------------
# Structured ops

def softmax_vector(v: Tensor) -> Tensor:
    """Softmax of an n x 1 column; stabilized by max subtraction."""
    if v.cols != 1:
        raise ValueError(f"softmax_vector expects an n x 1 column, got {v.shape}")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    s = e / e.sum()

    def push(g):
        dot = float((g * s).sum())
        _accum(v, s * (g - dot))

    return _make(s, (v,), push)


def select_rows(t: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows by strictly ascending indices; backward scatters."""
    idx = list(indices)
    if not idx:
        raise ValueError("select_rows requires at least one index")
    prev = -1
    for i in idx:
        if not isinstance(i, (int, np.integer)):
            raise ValueError(f"select_rows index {i!r} is not an integer")
        if i < 0 or i >= t.rows:
            raise ValueError(f"select_rows index {i} out of range for {t.rows} rows")
        if i <= prev:
            raise ValueError("select_rows indices must be strictly ascending (no duplicates)")
        prev = i
    idx_arr = np.asarray(idx, dtype=np.intp)

    def push(g):
        z = np.zeros(t.shape)
        z[idx_arr] = g
        _accum(t, z)

    return _make(t.data[idx_arr], (t,), push)


def concat_cols(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate along the feature axis; backward splits the gradient."""
    parts = list(tensors)
    if not parts:
        raise ValueError("concat_cols requires at least one tensor")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ValueError("concat_cols operands must share the row count")
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def push(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1),
                 tuple(parts), push)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def push(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), push)


def propagation_stack(prop: Tensor, x: Tensor, K: int) -> Tensor:
    """Columns [x, Px, P(Px), ...] for a constant propagation operator P.

    One tape record for the whole chain (the hot path of multiscale
    layers). Falls back to composed matmul/concat when P itself is on the
    tape, which our graph operators never are.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if prop.rows != prop.cols or prop.cols != x.rows:
        raise ValueError(f"propagation shape mismatch: {prop.shape} over {x.shape}")
    if _on_tape(prop):
        blocks = [x]
        for _ in range(K - 1):
            blocks.append(matmul(prop, blocks[-1]))
        return concat_cols(blocks)
    blocks = [x.data]
    for _ in range(K - 1):
        blocks.append(prop.data @ blocks[-1])
    c = x.cols
    prop_t = prop.data.T

    def push(g):
        acc = g[:, (K - 1) * c:]
        for k in range(K - 2, -1, -1):
            acc = g[:, k * c:(k + 1) * c] + prop_t @ acc
        _accum(x, acc)

    return _make(np.concatenate(blocks, axis=1), (x,), push)
