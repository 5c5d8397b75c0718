"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Forward operations record themselves on the active :class:`Tape`; calling
``tape.backward(loss)`` replays the records in exact reverse execution order
and accumulates analytic gradients into every participating tensor.  The op
set is exactly what the pair-interaction model needs; there is no fusion, no
parallel reduction, and no dtype other than float64, so results are
bit-reproducible for a fixed seed.

Node-axis reductions (``canonical_sum``) sort their addends by value before
reducing.  Floating-point addition is commutative but not associative, so
this is what makes graph readouts *bitwise* invariant under node relabeling
rather than merely invariant up to rounding.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the named operation."""


class NumericsError(ArithmeticError):
    """A numeric error state (NaN/Inf, domain violation, division by zero)."""


_LOCAL = threading.local()


def _cur_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """Dense float64 array with optional gradient accumulation.

    Tensors are immutable values once created inside a forward pass; the
    optimizer mutates parameter ``data`` only between steps.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor: non-finite entries in input data")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; heavy lifting happens in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return rsub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return rdiv(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(arr: np.ndarray, requires_grad: bool) -> Tensor:
    """Internal fast constructor: ops produce validated float64 arrays."""
    out = object.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = requires_grad
    return out


def constant(data) -> Tensor:
    """A tensor that never receives gradient (masks, targets, noise)."""
    return Tensor(data, requires_grad=False)


def fused_op(out_data: np.ndarray, requires_grad: bool, backward) -> Tensor:
    """Register a custom operation result with its backward closure.

    ``backward(upstream, store)`` must push gradients to the op's inputs via
    :func:`accumulate_grad`.  Lets domain modules fuse multi-step math into a
    single tape record.
    """
    out = _result(np.asarray(out_data, dtype=np.float64), requires_grad)
    tape = _cur_tape()
    if tape is not None and requires_grad:
        tape._record(out, backward)
    return out


def accumulate_grad(store: dict, t: Tensor, g: np.ndarray):
    """Accumulate an upstream gradient for ``t`` inside a backward closure."""
    _accumulate(store, t, g)


class Tape:
    """Ordered record of executed operations for one training step.

    Confined to a single thread; use as a context manager.  ``backward``
    walks the records in reverse execution order (which is always a valid
    reverse-topological order) and *accumulates* into ``.grad``, so running
    backward twice without clearing grads doubles them.
    """

    __slots__ = ("_ops", "_prev")

    def __init__(self):
        self._ops: list[tuple[Tensor, Callable]] = []
        self._prev = None

    def __enter__(self):
        self._prev = _cur_tape()
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc):
        _LOCAL.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self._ops)

    def _record(self, out: Tensor, backward: Callable):
        self._ops.append((out, backward))

    def backward(self, root: Tensor, seed_grad=None):
        """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf tensor.

        Upstream gradients are per-run; whatever is left unconsumed after the
        reverse walk belongs to leaves (tensors no recorded op produced) and
        is added onto their ``.grad``.
        """
        if not root.requires_grad:
            raise ValueError("backward: root does not require grad")
        if not np.all(np.isfinite(root.data)):
            raise NumericsError("backward: root value is non-finite")
        if seed_grad is None:
            g0 = np.ones_like(root.data)
        else:
            g0 = np.asarray(seed_grad, dtype=np.float64)
            if g0.shape != root.data.shape:
                raise ShapeError(
                    f"backward: seed grad shape {g0.shape} != root shape {root.data.shape}"
                )
        store: dict[int, list] = {id(root): [root, g0]}
        for out, bwd in reversed(self._ops):
            entry = store.pop(id(out), None)
            if entry is not None:
                bwd(entry[1], store)
        for t, g in store.values():
            t.grad = g.copy() if t.grad is None else t.grad + g


def _accumulate(store: dict, t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    tid = id(t)
    entry = store.get(tid)
    if entry is None:
        store[tid] = [t, g]
    else:
        entry[1] = entry[1] + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shapes(op: str, a: np.ndarray, b: np.ndarray):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = _result(a.data + float(b), a.requires_grad)
        tape = _cur_tape()
        if tape is not None and out.requires_grad:
            tape._record(out, lambda g, store, a=a: _accumulate(store, a, g))
        return out
    _binary_shapes("add", a.data, b.data)
    out = _result(a.data + b.data, a.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, b=b):
            _accumulate(store, a, _unbroadcast(g, a.data.shape))
            _accumulate(store, b, _unbroadcast(g, b.data.shape))

        tape._record(out, bwd)
    return out


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = _result(a.data - float(b), a.requires_grad)
        tape = _cur_tape()
        if tape is not None and out.requires_grad:
            tape._record(out, lambda g, store, a=a: _accumulate(store, a, g))
        return out
    _binary_shapes("sub", a.data, b.data)
    out = _result(a.data - b.data, a.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, b=b):
            _accumulate(store, a, _unbroadcast(g, a.data.shape))
            _accumulate(store, b, _unbroadcast(-g, b.data.shape))

        tape._record(out, bwd)
    return out


def rsub(a: Tensor, scalar) -> Tensor:
    out = _result(float(scalar) - a.data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, lambda g, store, a=a: _accumulate(store, a, -g))
    return out


def neg(a: Tensor) -> Tensor:
    out = _result(-a.data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, lambda g, store, a=a: _accumulate(store, a, -g))
    return out


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        out = _result(a.data * s, a.requires_grad)
        tape = _cur_tape()
        if tape is not None and out.requires_grad:
            tape._record(out, lambda g, store, a=a, s=s: _accumulate(store, a, g * s))
        return out
    _binary_shapes("mul", a.data, b.data)
    out = _result(a.data * b.data, a.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, b=b):
            _accumulate(store, a, _unbroadcast(g * b.data, a.data.shape))
            _accumulate(store, b, _unbroadcast(g * a.data, b.data.shape))

        tape._record(out, bwd)
    return out


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        if s == 0.0:
            raise NumericsError("div: division by zero scalar")
        return mul(a, 1.0 / s)
    _binary_shapes("div", a.data, b.data)
    if np.any(b.data == 0.0):
        raise NumericsError("div: division by zero")
    out_data = a.data / b.data
    out = _result(out_data, a.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, b=b, out_data=out_data):
            _accumulate(store, a, _unbroadcast(g / b.data, a.data.shape))
            _accumulate(store, b, _unbroadcast(-g * out_data / b.data, b.data.shape))

        tape._record(out, bwd)
    return out


def rdiv(a: Tensor, scalar) -> Tensor:
    if np.any(a.data == 0.0):
        raise NumericsError("div: division by zero")
    s = float(scalar)
    out_data = s / a.data
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, out_data=out_data):
            _accumulate(store, a, -g * out_data / a.data)

        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} are incompatible")
    out = _result(a.data @ b.data, a.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, b=b):
            if a.requires_grad:
                _accumulate(store, a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(store, b, a.data.T @ g)

        tape._record(out, bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.data.shape}")
    out = _result(a.data.T.copy(), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, lambda g, store, a=a: _accumulate(store, a, g.T))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.data.shape} as {shape}") from None
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(
            out, lambda g, store, a=a: _accumulate(store, a, g.reshape(a.data.shape))
        )
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    datas = [t.data for t in tensors]
    try:
        out_data = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[d.shape for d in datas]} do not align on axis {axis}"
        ) from None
    out = _result(out_data, any(t.requires_grad for t in tensors))
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        sizes = [d.shape[axis] for d in datas]

        def bwd(g, store, tensors=tuple(tensors), sizes=sizes, axis=axis):
            start = 0
            index = [slice(None)] * g.ndim
            for t, size in zip(tensors, sizes):
                index[axis] = slice(start, start + size)
                _accumulate(store, t, g[tuple(index)])
                start += size

        tape._record(out, bwd)
    return out


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    dim = a.data.shape[axis]
    if start < 0 or size < 0 or start + size > dim:
        raise ShapeError(
            f"narrow: slice [{start}:{start + size}] out of range for axis {axis} of shape {a.data.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)
    out = _result(a.data[index].copy(), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, index=index):
            full = np.zeros_like(a.data)
            full[index] = g
            _accumulate(store, a, full)

        tape._record(out, bwd)
    return out


def split(a: Tensor, parts: int, axis: int = -1) -> list[Tensor]:
    dim = a.data.shape[axis]
    if parts <= 0 or dim % parts != 0:
        raise ShapeError(f"split: axis {axis} of shape {a.data.shape} not divisible into {parts}")
    size = dim // parts
    return [narrow(a, axis, i * size, size) for i in range(parts)]


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-d tensor with an integer index array.

    Output shape is ``index.shape + (a.shape[1],)``; backward scatter-adds.
    """
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-d tensor, got shape {a.data.shape}")
    idx = np.asarray(index)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.data.shape[0]} rows")
    out = _result(a.data[idx], a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accumulate(store, a, full)

        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    if not np.all(np.isfinite(out_data)):
        raise NumericsError("exp: overflow to non-finite values")
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, lambda g, store, a=a, d=out_data: _accumulate(store, a, g * d))
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericsError("log: domain error (non-positive input)")
    out = _result(np.log(a.data), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, lambda g, store, a=a: _accumulate(store, a, g / a.data))
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise NumericsError("sqrt: domain error (negative input)")
    out_data = np.sqrt(a.data)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, d=out_data):
            if np.any(d == 0.0):
                raise NumericsError("sqrt: gradient undefined at zero")
            _accumulate(store, a, g * 0.5 / d)

        tape._record(out, bwd)
    return out


def _sigmoid_data(x: np.ndarray) -> np.ndarray:
    # sigmoid(x) = (tanh(x/2) + 1) / 2, stable across the whole real line
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid_data(a.data)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(
            out, lambda g, store, a=a, d=out_data: _accumulate(store, a, g * d * (1.0 - d))
        )
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(
            out, lambda g, store, a=a, d=out_data: _accumulate(store, a, g * (1.0 - d * d))
        )
    return out


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        tape._record(
            out, lambda g, store, a=a: _accumulate(store, a, g * (a.data > 0.0))
        )
    return out


def softplus(a: Tensor) -> Tensor:
    out = _result(np.logaddexp(0.0, a.data), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a):
            _accumulate(store, a, g * _sigmoid_data(a.data))

        tape._record(out, bwd)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (max-shifted for stability)."""
    x = a.data
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    out_data = z / z.sum(axis=-1, keepdims=True)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, d=out_data):
            inner = (g * d).sum(axis=-1, keepdims=True)
            _accumulate(store, a, d * (g - inner))

        tape._record(out, bwd)
    return out


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    out_data = np.clip(a.data, lo, hi)
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, lo=lo, hi=hi):
            mask = np.ones_like(a.data)
            if lo is not None:
                mask *= a.data >= lo
            if hi is not None:
                mask *= a.data <= hi
            _accumulate(store, a, g * mask)

        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions


def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - op name per contract
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        axes = _reduce_axes(axis, a.data.ndim)

        def bwd(g, store, a=a, axes=axes, keepdims=keepdims):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(store, a, np.broadcast_to(g, a.data.shape).copy())

        tape._record(out, bwd)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _reduce_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out = _result(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, axes=axes, keepdims=keepdims, count=count):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(store, a, np.broadcast_to(g / count, a.data.shape).copy())

        tape._record(out, bwd)
    return out


def variance(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (ddof=0) over the given axes."""
    axes = _reduce_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    mu = a.data.mean(axis=axes, keepdims=True)
    out = _result(((a.data - mu) ** 2).mean(axis=axes, keepdims=keepdims), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, axes=axes, keepdims=keepdims, count=count, mu=mu):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(store, a, 2.0 * (a.data - mu) * g / count)

        tape._record(out, bwd)
    return out


def canonical_sum(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Sum along one axis in a value-canonical (sorted) addition order.

    The result depends only on the multiset of addends, so reductions over
    graph-node axes are exactly invariant under node permutation.
    """
    srt = np.sort(a.data, axis=axis)
    out = _result(srt.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:
        axes = (axis % a.data.ndim,)

        def bwd(g, store, a=a, axes=axes, keepdims=keepdims):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(store, a, np.broadcast_to(g, a.data.shape).copy())

        tape._record(out, bwd)
    return out


def row_l2norm(a: Tensor) -> Tensor:
    """Row-wise Euclidean norm of a 2-d tensor, shape (N, 1)."""
    if a.data.ndim != 2:
        raise ShapeError(f"row_l2norm: expected 2-d tensor, got shape {a.data.shape}")
    out_data = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    out = _result(out_data, a.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, a=a, d=out_data):
            if np.any(d == 0.0):
                raise NumericsError("row_l2norm: gradient undefined for zero row")
            _accumulate(store, a, g * a.data / d)

        tape._record(out, bwd)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor, activation: str | None = None) -> Tensor:
    """Fused ``act(x @ w + b)`` with activation in {None, relu, tanh, sigmoid}."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: shapes {x.data.shape} and {w.data.shape} are incompatible")
    if b.data.shape != (1, w.data.shape[1]):
        raise ShapeError(
            f"affine: bias shape {b.data.shape} does not match output width {w.data.shape[1]}"
        )
    pre = x.data @ w.data + b.data
    if activation is None:
        out_data = pre
    elif activation == "relu":
        out_data = np.maximum(pre, 0.0)
    elif activation == "tanh":
        out_data = np.tanh(pre)
    elif activation == "sigmoid":
        out_data = _sigmoid_data(pre)
    else:
        raise ValueError(f"affine: unknown activation {activation!r}")
    out = _result(out_data, x.requires_grad or w.requires_grad or b.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, x=x, w=w, b=b, d=out_data, activation=activation):
            if activation == "relu":
                g = g * (d > 0.0)
            elif activation == "tanh":
                g = g * (1.0 - d * d)
            elif activation == "sigmoid":
                g = g * d * (1.0 - d)
            if x.requires_grad:
                _accumulate(store, x, g @ w.data.T)
            if w.requires_grad:
                _accumulate(store, w, x.data.T @ g)
            if b.requires_grad:
                _accumulate(store, b, g.sum(axis=0, keepdims=True))

        tape._record(out, bwd)
    return out


def attend_read(h: Tensor, q: Tensor) -> Tensor:
    """Batched attention read: softmax(h . q) over the node axis, then the
    weighted sum of rows.  ``h`` is (B, N, w), ``q`` is (B, w); returns (B, w).

    Node-axis reductions use value-canonical summation, so the result is
    bitwise invariant under node permutation within each sheet.
    """
    if h.data.ndim != 3 or q.data.ndim != 2 or h.data.shape[0] != q.data.shape[0] \
            or h.data.shape[2] != q.data.shape[1]:
        raise ShapeError(f"attend_read: shapes {h.data.shape} and {q.data.shape} do not align")
    hd, qd = h.data, q.data
    e = np.einsum("bnf,bf->bn", hd, qd)
    z = np.exp(e - e.max(axis=1, keepdims=True))  # detached max shift
    a = z / np.sort(z, axis=1).sum(axis=1, keepdims=True)
    prod = a[:, :, None] * hd
    out = _result(np.sort(prod, axis=1).sum(axis=1), h.requires_grad or q.requires_grad)
    tape = _cur_tape()
    if tape is not None and out.requires_grad:

        def bwd(g, store, h=h, q=q, a=a, hd=hd, qd=qd):
            da = np.einsum("bnf,bf->bn", hd, g)
            de = a * (da - (a * da).sum(axis=1, keepdims=True))
            if h.requires_grad:
                _accumulate(store, h, a[:, :, None] * g[:, None, :] + de[:, :, None] * qd[:, None, :])
            if q.requires_grad:
                _accumulate(store, q, np.einsum("bn,bnf->bf", de, hd))

        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# recurrent cell


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """One LSTM step; gate order along the last axis is (input, forget, cell, output).

    ``x`` is (B, in), ``h`` and ``c`` are (B, hidden); returns (h', c').
    Runs as one fused operation with a closed-form backward.
    """
    if x.data.ndim != 2 or h.data.ndim != 2 or c.data.ndim != 2:
        raise ShapeError("lstm_cell: x, h, c must be 2-d")
    if x.data.shape[0] != h.data.shape[0] or h.data.shape != c.data.shape:
        raise ShapeError(
            f"lstm_cell: batch/state mismatch x{x.data.shape} h{h.data.shape} c{c.data.shape}"
        )
    hidden = h.data.shape[1]
    if wx.data.shape != (x.data.shape[1], 4 * hidden) or wh.data.shape != (hidden, 4 * hidden):
        raise ShapeError(
            f"lstm_cell: weight shapes {wx.data.shape}/{wh.data.shape} do not match "
            f"input width {x.data.shape[1]} and hidden width {hidden}"
        )
    gates = x.data @ wx.data + h.data @ wh.data + b.data
    gi = _sigmoid_data(gates[:, :hidden])
    gf = _sigmoid_data(gates[:, hidden : 2 * hidden])
    gg = np.tanh(gates[:, 2 * hidden : 3 * hidden])
    go = _sigmoid_data(gates[:, 3 * hidden :])
    c_data = gf * c.data + gi * gg
    tc = np.tanh(c_data)
    rg = x.requires_grad or h.requires_grad or c.requires_grad \
        or wx.requires_grad or wh.requires_grad or b.requires_grad
    h_out = _result(go * tc, rg)
    c_out = _result(c_data, rg)
    tape = _cur_tape()
    if tape is not None and rg:
        done = [False]

        def run(dh, dc, store):
            if dh is None:
                dh = np.zeros_like(h_out.data)
            if dc is None:
                dc = np.zeros_like(c_data)
            d_go = dh * tc
            dc_total = dc + dh * go * (1.0 - tc * tc)
            d_gf = dc_total * c.data
            d_gi = dc_total * gg
            d_gg = dc_total * gi
            d_gates = np.concatenate(
                [
                    d_gi * gi * (1.0 - gi),
                    d_gf * gf * (1.0 - gf),
                    d_gg * (1.0 - gg * gg),
                    d_go * go * (1.0 - go),
                ],
                axis=1,
            )
            if x.requires_grad:
                _accumulate(store, x, d_gates @ wx.data.T)
            if h.requires_grad:
                _accumulate(store, h, d_gates @ wh.data.T)
            if c.requires_grad:
                _accumulate(store, c, dc_total * gf)
            if wx.requires_grad:
                _accumulate(store, wx, x.data.T @ d_gates)
            if wh.requires_grad:
                _accumulate(store, wh, h.data.T @ d_gates)
            if b.requires_grad:
                _accumulate(store, b, d_gates.sum(axis=0, keepdims=True))

        # Whichever output's record pops first sees both upstream gradients
        # finalized (all consumers of either output come later on the tape),
        # so it runs the whole backward and the other record is a no-op.
        def bwd_h(dh, store):
            if not done[0]:
                done[0] = True
                entry = store.get(id(c_out))
                run(dh, None if entry is None else entry[1], store)

        def bwd_c(dc, store):
            if not done[0]:
                done[0] = True
                entry = store.get(id(h_out))
                run(None if entry is None else entry[1], dc, store)

        tape._record(h_out, bwd_h)
        tape._record(c_out, bwd_c)
    return h_out, c_out


# ---------------------------------------------------------------------------
# finite-difference gradient verification


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max mixed relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``x`` (freeze any
    stochastic draws before calling).  Error per coordinate is
    ``|ga - gn| / max(1, |ga|, |gn|)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"gradcheck: eps {eps} outside [1e-7, 1e-3]")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        if y.data.size != 1:
            raise ShapeError(f"gradcheck: f must be scalar-valued, got shape {y.shape}")
        if not np.isfinite(y.data.reshape(())):
            raise NumericsError("gradcheck: f(x) is non-finite")
        tape.backward(y)
    analytic = probe.grad.reshape(-1).copy()

    flat = probe.data.reshape(-1)
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(probe).item()
        flat[i] = orig - eps
        f_minus = f(probe).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
