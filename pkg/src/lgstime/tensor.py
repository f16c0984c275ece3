"""Dense float64 tensors with a define-by-run reverse-mode tape.

Operations executed while a :class:`GradTape` is active are recorded on it
whenever one of their inputs requires a gradient.  ``tape.backward(loss)``
sweeps the record in reverse and returns the gradient of every trainable leaf.

Broadcasting is deliberately absent: binary elementwise ops need identical
shapes, and the only implicit expansion is :func:`add_bias` (a row vector added
to every row) and :func:`matmul` with a shared 2-D right operand.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateRowError, DimensionError, StaleTapeError

DTYPE = np.float64
# Stands in for -inf in attention masks: -inf * 0 would poison the adjoint with NaN.
MASK_VALUE = -1e9

_local = threading.local()


def _stack() -> list["GradTape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: GradTape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, idx) -> "Tensor":
        return getitem(self, idx)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


class GradTape:
    """Ordered record of executed operations for one forward pass.

    Usage::

        with GradTape() as tape:
            loss = mse_loss(model(x), y)
        grads = tape.backward(loss)
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], fn: Callable) -> None:
        if self._consumed:
            raise StaleTapeError("cannot record on a tape that has already been swept")
        for p in parents:
            if p.requires_grad and p._tape is None:
                self._leaves[id(p)] = p
        self._nodes.append((out, parents, fn))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse sweep from a scalar ``loss``.

        Returns a map from every trainable leaf seen by the tape to its gradient
        (zeros for leaves that do not influence the loss).  Each leaf's ``grad``
        attribute is overwritten with the same array.
        """
        if self._consumed:
            raise StaleTapeError("backward already ran on this tape; re-run the forward pass")
        if loss._tape is not self:
            raise StaleTapeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                prev = grads.get(k)
                grads[k] = pg if prev is None else prev + pg

        self._consumed = True
        self._nodes.clear()
        result: dict[Tensor, np.ndarray] = {}
        for k, leaf in self._leaves.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(leaf.data)
            elif g.shape != leaf.data.shape:
                g = np.broadcast_to(g, leaf.data.shape).copy()
            leaf.grad = g
            result[leaf] = g
        return result


def _make(out: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    t = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                t.requires_grad = True
                t._tape = tape
                tape._record(t, parents, fn)
                break
    return t


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- local adjoint rules (module level so they can be audited or patched) --


def _sigmoid_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * out * (1.0 - out)


def _tanh_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1.0 - out * out)


def _softmax_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return out * (g - np.sum(g * out, axis=-1, keepdims=True))


# -- operations --


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for (..., m, k) x (..., k, n) with equal leading extents,
    or a batched left operand against a shared 2-D right operand."""
    A, B = a.data, b.data
    ok = A.ndim >= 2 and B.ndim >= 2 and A.shape[-1] == B.shape[-2]
    if ok and B.ndim > 2:
        ok = A.shape[:-2] == B.shape[:-2]
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {A.shape} and {B.shape}")

    def backward(g):
        ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if B.ndim == 2 and A.ndim > 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _make(A @ B, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the row vector ``b`` to every row of ``x``."""
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * x + shift`` with Python-scalar coefficients."""
    return _make(x.data * scale + shift, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    X = x.data
    # Split by sign so exp never overflows.
    e = np.exp(-np.abs(X))
    out = np.where(X >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (_sigmoid_grad(out, g),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (_tanh_grad(out, g),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, *args: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    return fn(*args)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    X = x.data
    if X.ndim < 1 or X.shape[-1] == 0:
        raise DimensionError(f"softmax_rows: empty rows in shape {X.shape}")
    row_max = X.max(axis=-1, keepdims=True)
    if np.any(row_max <= MASK_VALUE / 2):
        raise DegenerateRowError("softmax row has every entry masked")
    e = np.exp(X - row_max)
    out = e / e.sum(axis=-1, keepdims=True)
    return _make(out, (x,), lambda g: (_softmax_grad(out, g),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    nd = tensors[0].ndim
    ax = axis % nd
    ref = tensors[0].shape
    for t in tensors[1:]:
        s = t.shape
        if len(s) != nd or s[:ax] + s[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(
                f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(out, tuple(tensors), backward)


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice / integer) indexing."""
    out = x.data[idx]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=DTYPE)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), backward)


def slice_columns(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[-1]:
        raise DimensionError(f"slice_columns: [{start}, {stop}) outside width {x.shape[-1]}")
    return getitem(x, (Ellipsis, slice(start, stop)))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got {x.shape}")
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}")
    return _make(out, (x,), lambda g: (g.reshape(old),))


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out, dtype=DTYPE), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise DimensionError("mean over an empty extent")
    return affine(sum_(x, axis), 1.0 / count)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Zero-padded "same" 1-D convolution over time.

    ``x`` is (batch, length, c_in) and ``w`` is (kernel, c_in, c_out) with an
    odd kernel; the output is (batch, length, c_out).
    """
    X, W = x.data, w.data
    if X.ndim != 3 or W.ndim != 3 or X.shape[2] != W.shape[1] or W.shape[0] % 2 != 1:
        raise DimensionError(f"conv1d: input {X.shape} incompatible with kernel {W.shape}")
    k = W.shape[0]
    pad = k // 2
    length = X.shape[1]
    Xp = np.pad(X, ((0, 0), (pad, pad), (0, 0)))
    out = sum(Xp[:, j:j + length, :] @ W[j] for j in range(k))

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(Xp)
            for j in range(k):
                gxp[:, j:j + length, :] += g @ W[j].T
            gx = gxp[:, pad:pad + length, :]
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack(
                [Xp[:, j:j + length, :].reshape(-1, X.shape[2]).T @ g2 for j in range(k)]
            )
        return gx, gw

    return _make(out, (x, w), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over every element."""
    d = sub(pred, target)
    return mean(mul(d, d))
