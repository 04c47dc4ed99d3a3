"""Minimal reverse-mode differentiation over dense float64 arrays.

A ``Tensor`` remembers the primitive that produced it and the tensors it was
computed from. ``Tape.record`` walks that graph from a scalar loss and emits a
topologically ordered record; ``Tape.backward`` replays it in reverse,
accumulating gradients additively across fan-out.

There is no global state: each graph belongs to the tensors that build it,
so independent training runs can proceed in parallel.
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.errors import DimensionError, ParameterError, SelectionError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array with an optional gradient."""

    # Make numpy defer to our reflected operators (ndarray + Tensor -> Tensor).
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self.inputs: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        # Entries the optimizer may update; None means all of them.
        self.trainable_mask: Optional[np.ndarray] = None
        # Per-parameter optimizer moments (see optim.adam_step).
        self.optimizer_state: dict = {}

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def backward(self):
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def lift(x: TensorLike) -> Tensor:
    """Wrap constants as non-differentiable tensors."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, op: str, inputs: Tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    out.op = op
    if out.requires_grad:
        out.inputs = inputs
        out._backward = fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, *tensors: Tensor):
    try:
        np.broadcast_shapes(*(t.shape for t in tensors))
    except ValueError:
        raise DimensionError(op, [t.shape for t in tensors]) from None


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = lift(a), lift(b)
    _broadcast_check("add", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.values + b.values, "add", (a, b), fn)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = lift(a), lift(b)
    _broadcast_check("mul", a, b)

    def fn(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _result(a.values * b.values, "mul", (a, b), fn)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return add(a, mul(b, -1.0))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = lift(a), lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", [a.shape, b.shape])
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", [a.shape, b.shape]) from None

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.values, b.values), "matmul", (a, b), fn)


def exp(a: TensorLike) -> Tensor:
    a = lift(a)
    y = np.exp(a.values)
    return _result(y, "exp", (a,), lambda g: (g * y,))


def log(a: TensorLike) -> Tensor:
    a = lift(a)
    return _result(np.log(a.values), "log", (a,), lambda g: (g / a.values,))


def tanh(a: TensorLike) -> Tensor:
    a = lift(a)
    y = np.tanh(a.values)
    return _result(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def softmax(a: TensorLike, tau: float = 1.0, axis: int = -1) -> Tensor:
    """exp(a_n / tau) / sum_j exp(a_j / tau), stabilised by the per-row maximum."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    a = lift(a)
    scaled = a.values / tau
    scaled = scaled - scaled.max(axis=axis, keepdims=True)
    e = np.exp(scaled)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y / tau,)

    return _result(y, "softmax", (a,), fn)


def sum_(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = lift(a)

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(a.values.sum(axis=axis), "sum", (a,), fn)


def mean(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = lift(a)
    count = a.values.size if axis is None else a.shape[axis]

    def fn(g):
        if axis is None:
            return (np.full(a.shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / count,)

    return _result(a.values.mean(axis=axis), "mean", (a,), fn)


def reshape(a: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    a = lift(a)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", [a.shape, tuple(shape)]) from None
    return _result(values, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    items = tuple(lift(t) for t in tensors)
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise DimensionError("stack", [t.shape for t in items])
    values = np.stack([t.values for t in items], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _result(values, "stack", items, fn)


def cross_entropy(logits: TensorLike, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    logits = lift(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("cross_entropy", [logits.shape, labels.shape])
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DimensionError("cross_entropy", [logits.shape, labels.shape])
    z = logits.values
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = log_norm - shifted[rows, labels]

    def fn(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (float(g) / z.shape[0]),)

    return _result(np.array(losses.mean()), "cross_entropy", (logits,), fn)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Tape:
    """Topologically ordered record of the primitives behind an output."""

    def __init__(self, entries: List[Tensor]):
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack_: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack_.append((node, True))
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack_.append((inp, False))
        return cls(order)

    def backward(self, output: Tensor):
        grads = {id(output): np.ones_like(output.values)}
        for node in reversed(self.entries):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            node.grad = g
            for inp, gi in zip(node.inputs, node._backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi


def backward(loss: Tensor):
    """Populate .grad on every tensor that requires it and feeds `loss`."""
    if loss.values.size != 1:
        raise SelectionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.record(loss).backward(loss)
