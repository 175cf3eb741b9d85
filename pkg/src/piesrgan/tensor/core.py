"""Dense float64 tensors with a reverse-mode gradient tape.

Only the primitives the generator, discriminator and losses need are
provided.  Values are never mutated after creation; every primitive
returns a fresh :class:`Tensor` and, when a tape is active and one of the
inputs is tracked, appends a node holding the vector-Jacobian product.

Example
-------
>>> w = Tensor([3.0], requires_grad=True)
>>> with GradientTape() as tape:
...     loss = (w * w).sum()
>>> tape.gradient(loss, [w])[0]
array([6.])
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ShapeError

_TAPE_STACK: list["GradientTape"] = []


def active_tape() -> Optional["GradientTape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """An immutable n-d float64 array that may participate in a tape.

    ``tape_id`` is the node index on the tape that produced the value, or
    ``None`` for leaves and detached values.
    """

    __slots__ = ("data", "requires_grad", "tape_id", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tape_id: Optional[int] = None
        self._tape: Optional[GradientTape] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.tape_id = None
        t._tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def tracked(self, tape: Optional["GradientTape"]) -> bool:
        if tape is None:
            return False
        return self.requires_grad or (self._tape is tape and self.tape_id is not None)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all of it routes through the primitives below
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("parents", "vjp", "shape")

    def __init__(self, parents, vjp, shape):
        self.parents = parents
        self.vjp = vjp
        self.shape = shape


class GradientTape:
    """Records primitive applications in execution order.

    Use as a context manager; nested tapes are allowed but only the
    innermost one records.  ``visits`` counts nodes processed by the most
    recent :meth:`backward` call.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.visits = 0

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.remove(self)
        return False

    def reset(self):
        self.nodes = []
        self.visits = 0

    def record(self, data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        out = Tensor._wrap(data)
        out._tape = self
        out.tape_id = len(self.nodes)
        self.nodes.append(_Node(tuple(parents), vjp, out.data.shape))
        return out

    def backward(self, loss: Tensor) -> dict:
        """Reverse sweep from a scalar ``loss``.

        Returns a mapping ``{tensor: gradient}`` for every leaf with
        ``requires_grad`` that the loss depends on.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.tape_id is None:
            raise ValueError("loss was not recorded on this tape")
        node_grads: dict[int, np.ndarray] = {loss.tape_id: np.ones(loss.shape)}
        leaf_grads: dict[int, np.ndarray] = {}
        leaves: dict[int, Tensor] = {}
        self.visits = 0
        for idx in range(loss.tape_id, -1, -1):
            g = node_grads.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            self.visits += 1
            pgrads = node.vjp(g)
            for parent, pg in zip(node.parents, pgrads):
                if pg is None:
                    continue
                if parent._tape is self and parent.tape_id is not None:
                    key = parent.tape_id
                    if key in node_grads:
                        node_grads[key] = node_grads[key] + pg
                    else:
                        node_grads[key] = pg
                elif parent.requires_grad:
                    key = id(parent)
                    leaves[key] = parent
                    if key in leaf_grads:
                        leaf_grads[key] = leaf_grads[key] + pg
                    else:
                        leaf_grads[key] = pg
        return {leaves[k]: g for k, g in leaf_grads.items()}

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list:
        grads = self.backward(loss)
        return [grads.get(s, np.zeros(s.shape)) for s in sources]


def _record(data, parents, vjp) -> Tensor:
    tape = active_tape()
    if tape is not None and any(p.tracked(tape) for p in parents):
        return tape.record(data, parents, vjp)
    return Tensor._wrap(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _record(out, (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record(x.data[index], (x,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(ts)))

    return _record(out, ts, vjp)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where unclamped."""
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _record(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def log_sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    # d/dx log(sigmoid(x)) = sigmoid(-x)
    sig_neg = np.exp(-np.logaddexp(0.0, xd))
    return _record(out, (x,), lambda g: (g * sig_neg,))


def leaky_relu(x, negative_slope: float = 0.2) -> Tensor:
    """``max(x, slope*x)``; the derivative at exactly 0 is ``slope``."""
    if not 0.0 < negative_slope < 1.0:
        raise ValueError(f"negative_slope must lie in (0, 1), got {negative_slope}")
    x = as_tensor(x)
    xd = x.data
    slope = np.where(xd > 0.0, 1.0, negative_slope)
    return _record(xd * slope, (x,), lambda g: (g * slope,))
