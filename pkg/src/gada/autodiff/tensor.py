"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its inputs and a closure mapping the output
gradient to one gradient per input. ``backward`` walks nodes in reverse
creation order, which is a valid topological order because an op's output is
always created after its inputs. That fixed order makes gradient accumulation
deterministic.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_counter)

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> dict[Tensor, np.ndarray]:
        return backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor.

    ``decay`` marks whether the optimizer applies weight decay to it.
    """

    __slots__ = ("decay",)

    def __init__(self, data, name: str | None = None, decay: bool = True):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_counter)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


elementwise_mul = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def clamped_log(x, floor: float, ceil: float | None = None) -> Tensor:
    """``log(clip(x, floor, ceil))`` whose gradient stays ``1/x`` everywhere.

    The value is bounded like a clamped log, but saturated entries keep
    pulling their producer back instead of going silent.
    """
    x = as_tensor(x)
    xd = x.data
    safe = np.maximum(xd, np.finfo(np.float64).tiny)
    return _make(np.log(np.clip(xd, floor, ceil)), (x,), lambda g: (g / safe,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def clip(x, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; the gradient is zero wherever the clamp is active."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x.data > lo
    if hi is not None:
        inside &= x.data < hi
    return _make(out, (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions
def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted)."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), back)


# ---------------------------------------------------------------- structural
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), back)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and n != m for i, (n, m) in enumerate(zip(t.shape, ref))
        ):
            raise ShapeError(
                f"concat shape mismatch along axis {axis}: {[t.shape for t in ts]}"
            )
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(
        np.concatenate([t.data for t in ts], axis=ax),
        tuple(ts),
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    basic = all(isinstance(i, (int, slice)) for i in (index if isinstance(index, tuple) else (index,)))

    def back(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(np.array(x.data[index]), (x,), back)


def gather(x, index, axis: int = 0) -> Tensor:
    """Select a scalar or slice by integer index along ``axis``.

    An integer ``index`` drops the axis; an integer array picks one entry per
    leading row (``out[i] = x[i, index[i]]`` for 2-D input along axis 1).
    """
    x = as_tensor(x)
    n = x.shape[axis]
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise IndexError(f"gather index must be integral, got {idx.dtype}")
    if np.any(idx < 0) or np.any(idx >= n):
        raise IndexError(f"gather index {index} out of range for axis of size {n}")
    if idx.ndim == 0:
        sl = [slice(None)] * x.ndim
        sl[axis] = int(idx)
        return getitem(x, tuple(sl))
    if x.ndim != 2 or axis not in (1, -1) or len(idx) != x.shape[0]:
        raise ShapeError(f"row-wise gather needs 2-D input and one index per row, got {x.shape}")
    return getitem(x, (np.arange(len(idx)), idx))


def grad_reverse(x, eta: float = 1.0) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-eta``."""
    x = as_tensor(x)
    return _make(x.data.copy(), (x,), lambda g: (-eta * g,))


# ------------------------------------------------------------------ backward
def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires-grad leaf.

    Returns the mapping leaf -> gradient. Non-scalar roots are rejected.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}

    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad and p._id not in nodes)

    grads: dict[int, np.ndarray] = {root._id: np.ones(root.shape)}
    leaves: dict[Tensor, np.ndarray] = {}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.pop(tid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g if t.grad is None else t.grad + g
            leaves[t] = t.grad
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(p._id)
            grads[p._id] = pg if prev is None else prev + pg
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
