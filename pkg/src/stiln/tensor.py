"""Minimal reverse-mode autodiff on numpy arrays.

A :class:`Tape` records every differentiable op executed while it is active;
nodes are appended in creation order, so the list itself is a topological
order and :func:`backward` is a single reverse sweep. Tensors default to
float32 storage; pass ``dtype=np.float64`` to run a whole graph in float64
(gradient checks do this). Reductions accumulate in float64 regardless of
storage dtype.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Append-only op record; use as a context manager around the forward pass.

    One tape supports exactly one backward sweep. Building new ops on a tape
    that has already been unwound is an error, as is nesting tapes.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out: "Tensor", backward: Callable[[np.ndarray], None]) -> None:
        self.out = out
        self.backward = backward


class Tensor:
    """A numpy array plus an accumulated gradient buffer.

    ``requires_grad=True`` at construction marks a leaf parameter and
    allocates a zero gradient buffer immediately, so parameters that never
    participate in a graph still report zero gradients after backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        if dtype is None:
            dtype = np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    # arithmetic sugar
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

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _record(out: Tensor, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Attach ``out`` to the active tape if any input participates in autodiff."""
    tape = _ACTIVE_TAPE
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    if tape._consumed:
        raise ContractError(
            "this tape has already been unwound; open a fresh Tape to build more ops"
        )
    out.requires_grad = True
    out._tape = tape
    tape._nodes.append(_Node(out, backward))
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, allocating the buffer on first touch."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.grad.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar; gradients accumulate into ``.grad`` buffers.

    Each tape supports one sweep. Gradients of gradients are unsupported: the
    sweep itself records nothing, and a second call on the same tape raises.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            accumulate_grad(loss, np.ones_like(loss.data))
        return
    if tape._consumed:
        raise ContractError(
            "backward was already run through this tape; rebuild the graph "
            "under a fresh Tape (second-order gradients are unsupported)"
        )
    tape._consumed = True
    accumulate_grad(loss, np.ones_like(loss.data))
    for node in reversed(tape._nodes):
        g = node.out.grad
        if g is None:
            continue  # not on any path to the loss
        node.backward(g)
    # A consumed tape can never run again, so drop the closures now. They
    # capture their output tensors (a reference cycle), and without this the
    # activations of every step pile up until a full gc pass.
    for node in tape._nodes:
        node.backward = None
    tape._nodes.clear()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    try:
        out = Tensor(a.data + b.data, dtype=np.result_type(a.data, b.data))
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    try:
        out = Tensor(a.data - b.data, dtype=np.result_type(a.data, b.data))
    except ValueError as e:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from e

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    try:
        out = Tensor(a.data * b.data, dtype=np.result_type(a.data, b.data))
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e
    a_data, b_data = a.data, b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g * b_data, a.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(g * a_data, b.shape))

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        accumulate_grad(a, -g)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul supports 2-D operands only, got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, dtype=np.result_type(a.data, b.data))
    a_data, b_data = a.data, b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate_grad(a, g @ b_data.T)
        if b.requires_grad:
            accumulate_grad(b, a_data.T @ g)

    return _record(out, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), dtype=a.data.dtype)
    mask = a.data > 0  # subgradient 0 at the kink

    def bwd(g: np.ndarray) -> None:
        accumulate_grad(a, g * mask)

    return _record(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    out = Tensor(y, dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        accumulate_grad(a, g * y * (1.0 - y))

    return _record(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        accumulate_grad(a, g * (1.0 - y * y))

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    try:
        out_data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from e
    out = Tensor(out_data, dtype=a.data.dtype)
    in_shape = a.data.shape

    def bwd(g: np.ndarray) -> None:
        accumulate_grad(a, g.reshape(in_shape))

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if len(tensors) == 0:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].data.ndim
    ax = axis if axis >= 0 else axis + ndim
    if not 0 <= ax < ndim:
        raise ShapeError(f"concat axis {axis} out of range for ndim {ndim}")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            i != ax and t.shape[i] != ref[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat: shapes {ref} and {t.shape} differ off axis {ax}"
            )
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=ax),
        dtype=np.result_type(*[t.data for t in tensors]),
    )
    extents = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * ndim
                sl[ax] = slice(int(lo), int(hi))
                accumulate_grad(t, g[tuple(sl)])

    return _record(out, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    ndim = a.data.ndim
    ax = axis if axis >= 0 else axis + ndim
    if not 0 <= ax < ndim:
        raise ShapeError(f"narrow axis {axis} out of range for ndim {ndim}")
    if start < 0 or length < 1 or start + length > a.shape[ax]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] exceeds extent {a.shape[ax]} on axis {ax}"
        )
    sl = [slice(None)] * ndim
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(a.data[sl], dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[sl] += g.astype(a.grad.dtype, copy=False)

    return _record(out, (a,), bwd)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a if a >= 0 else a + ndim for a in axis))
    if len(set(axes)) != len(axes) or any(not 0 <= a < ndim for a in axes):
        raise ShapeError(f"bad reduction axes {axis} for ndim {ndim}")
    return axes


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, dtype=np.float64, keepdims=keepdims)
    out = Tensor(out_data.astype(a.data.dtype), dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        gg = g
        if not keepdims:
            for ax in axes:
                gg = np.expand_dims(gg, ax)
        accumulate_grad(a, np.broadcast_to(gg, a.shape))

    return _record(out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out_data = a.data.mean(axis=axes, dtype=np.float64, keepdims=keepdims)
    out = Tensor(out_data.astype(a.data.dtype), dtype=a.data.dtype)

    def bwd(g: np.ndarray) -> None:
        gg = g
        if not keepdims:
            for ax in axes:
                gg = np.expand_dims(gg, ax)
        accumulate_grad(a, np.broadcast_to(gg, a.shape) / count)

    return _record(out, (a,), bwd)


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max over ``axis``; ties route the gradient to the first occurrence
    in row-major scan order."""
    axes = _normalize_axes(axis, a.data.ndim)
    keep = tuple(i for i in range(a.data.ndim) if i not in axes)
    perm = keep + axes
    moved = a.data.transpose(perm)
    lead_shape = moved.shape[: len(keep)]
    flat = moved.reshape(lead_shape + (-1,))
    idx = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        shp = tuple(1 if i in axes else a.shape[i] for i in range(a.data.ndim))
        out = Tensor(vals.reshape(shp), dtype=a.data.dtype)
    else:
        out = Tensor(vals, dtype=a.data.dtype)
    inv_perm = np.argsort(perm)

    def bwd(g: np.ndarray) -> None:
        gflat = g.reshape(lead_shape)
        buf = np.zeros_like(flat)
        np.put_along_axis(buf, idx[..., None], gflat[..., None].astype(buf.dtype), axis=-1)
        accumulate_grad(a, buf.reshape(moved.shape).transpose(inv_perm))

    return _record(out, (a,), bwd)
