"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

The engine is define-by-run: every differentiable operation executes eagerly
on numpy arrays and, when any input tracks gradients, appends a record to the
active tape. Because records are appended in execution order, the tape is
already topologically sorted and a single reverse sweep propagates gradients
to every participating tensor. Gradients accumulate additively, so a tensor
feeding several downstream operations receives the sum of all contributions.

Everything is float64. Each operation checks its output (and, during the
reverse sweep, each propagated gradient) for NaN or Inf and raises
NumericFault naming the operation, so numerical trouble surfaces at its
source instead of silently corrupting a training run.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "NumericFault",
    "Tensor",
    "Tape",
    "active_tape",
    "use_tape",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "take_rows",
    "row",
    "pick",
    "sigmoid",
    "tanh",
    "softmax",
    "logsumexp",
    "l2_normalize",
    "dropout",
    "reduce_max",
    "reduce_sum",
]


class NumericFault(ArithmeticError):
    """An operation produced a NaN or Inf value or gradient."""


class Tensor:
    """A dense float64 array with an optional same-shape gradient buffer.

    Tensors created with ``requires_grad=True`` (model parameters) carry a
    zero-initialized ``grad`` buffer from birth; operation outputs allocate
    theirs lazily during the reverse sweep. ``values`` may be mutated in
    place only for leaf tensors (the optimizer does this); graph outputs
    must be treated as frozen.
    """

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad[...] = 0.0

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered log of executed differentiable operations.

    Execution order is topological order, so the reverse sweep visits each
    record exactly once and never needs to revisit or reorder.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_active_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    """Return the tape new operations currently record onto."""
    return _active_tape


@contextlib.contextmanager
def use_tape(tape: Tape):
    """Temporarily swap in a different tape (for isolated model instances)."""
    global _active_tape
    previous = _active_tape
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = previous


@contextlib.contextmanager
def no_grad():
    """Disable gradient tracking; forward values are computed as usual."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericFault(f"operation '{op}' produced non-finite values")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, backward_fn) -> Tensor:
    _check_finite(out_values, op)
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_values)
    out.requires_grad = track
    if track:
        _active_tape.records.append(_Record(op, inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the source shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss back through the active tape.

    Visits the tape once in reverse, accumulating into every participating
    tensor's ``grad``, then clears the tape. The loss must be a scalar
    produced by tracked operations on the active tape.
    """
    if loss.values.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _active_tape
    if not tape.records:
        raise ValueError("backward called with an empty tape")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad[...] = 1.0
    try:
        for rec in reversed(tape.records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue
            grads = rec.backward_fn(out_grad)
            for tensor, g in zip(rec.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                _check_finite(g, rec.op)
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.values)
                tensor.grad += g
    finally:
        tape.clear()


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values + b.values

    def backward_fn(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return _emit("add", (a, b), out, backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values - b.values

    def backward_fn(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(-g, b.values.shape)

    return _emit("sub", (a, b), out, backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values * b.values
    av, bv = a.values, b.values

    def backward_fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _emit("mul", (a, b), out, backward_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (-g,)

    return _emit("neg", (a,), -a.values, backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix/vector product for the 1-D and 2-D cases the model uses."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D and 2-D operands, got {av.ndim}-D @ {bv.ndim}-D")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {av.shape} @ {bv.shape}")
    out = av @ bv

    def backward_fn(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av

    return _emit("matmul", (a, b), out, backward_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([t.values for t in parts], axis=axis)
    sizes = [t.values.shape[axis] for t in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit("concat", parts, out, backward_fn)


def stack(tensors) -> Tensor:
    """Stack equal-shape tensors as the rows of a new leading axis."""
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ValueError("stack needs at least one tensor")
    out = np.stack([t.values for t in parts], axis=0)

    def backward_fn(g):
        return tuple(g[i] for i in range(len(parts)))

    return _emit("stack", parts, out, backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src = a.values.shape
    out = a.values.reshape(shape)

    def backward_fn(g):
        return (g.reshape(src),)

    return _emit("reshape", (a,), out, backward_fn)


def take_rows(a, indices) -> Tensor:
    """Gather rows of a matrix; repeated indices accumulate gradient."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.values.ndim != 2:
        raise ValueError(f"take_rows expects a matrix, got shape {a.shape}")
    out = a.values[idx]

    def backward_fn(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, idx, g)
        return (ga,)

    return _emit("take_rows", (a,), out, backward_fn)


def row(a, index: int) -> Tensor:
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"row expects a matrix, got shape {a.shape}")
    i = int(index)
    out = a.values[i]

    def backward_fn(g):
        ga = np.zeros_like(a.values)
        ga[i] = g
        return (ga,)

    return _emit("row", (a,), out, backward_fn)


def pick(a, index: int) -> Tensor:
    """Select one element of a vector as a scalar tensor."""
    a = _as_tensor(a)
    if a.values.ndim != 1:
        raise ValueError(f"pick expects a vector, got shape {a.shape}")
    i = int(index)
    if not 0 <= i < a.values.shape[0]:
        raise ValueError(f"pick index {i} out of range for length {a.values.shape[0]}")
    out = a.values[i].reshape(())

    def backward_fn(g):
        ga = np.zeros_like(a.values)
        ga[i] = g
        return (ga,)

    return _emit("pick", (a,), out, backward_fn)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    s = out

    def backward_fn(g):
        return (g * s * (1.0 - s),)

    return _emit("sigmoid", (a,), out, backward_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.values)
    t = out

    def backward_fn(g):
        return (g * (1.0 - t * t),)

    return _emit("tanh", (a,), out, backward_fn)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along one axis; the row max is subtracted before exponentiation."""
    a = _as_tensor(a)
    x = a.values
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    p = out

    def backward_fn(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _emit("softmax", (a,), out, backward_fn)


def logsumexp(a) -> Tensor:
    """log(sum(exp(x))) over all elements, computed with the max subtracted."""
    a = _as_tensor(a)
    x = a.values
    m = x.max()
    out = np.asarray(m + np.log(np.exp(x - m).sum()))
    val = out

    def backward_fn(g):
        return (g * np.exp(x - val),)

    return _emit("logsumexp", (a,), out, backward_fn)


def l2_normalize(a, axis: int = -1, epsilon: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm.

    The divisor is max(norm, epsilon), so inputs with norm above epsilon come
    out exactly unit length and the zero vector passes through unchanged.
    """
    a = _as_tensor(a)
    x = a.values
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, epsilon)
    out = x / denom
    y = out

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        # Below the epsilon guard the divisor is constant, so the projection
        # term disappears and the map is plain scaling.
        proj = np.where(norm > epsilon, dot, 0.0)
        return ((g - y * proj) / denom,)

    return _emit("l2_normalize", (a,), out, backward_fn)


def dropout(a, keep_prob: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/keep_prob.

    Identity when ``training`` is false or ``keep_prob`` is 1, in which case
    the input tensor is returned as-is.
    """
    a = _as_tensor(a)
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(a.values.shape) < keep_prob) / keep_prob
    out = a.values * mask

    def backward_fn(g):
        return (g * mask,)

    return _emit("dropout", (a,), out, backward_fn)


def reduce_max(a, axis: int | None = None) -> Tensor:
    """Maximum along an axis; gradient flows only to the first maximal entry."""
    a = _as_tensor(a)
    x = a.values
    out = x.max(axis=axis)

    def backward_fn(g):
        ga = np.zeros_like(x)
        if axis is None:
            ga[np.unravel_index(np.argmax(x), x.shape)] = g
        elif x.ndim == 2 and axis in (1, -1):
            idx = np.argmax(x, axis=1)
            ga[np.arange(x.shape[0]), idx] = g
        elif x.ndim == 2 and axis == 0:
            idx = np.argmax(x, axis=0)
            ga[idx, np.arange(x.shape[1])] = g
        else:
            idx = np.expand_dims(np.argmax(x, axis=axis), axis)
            np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis)
        return (ga,)

    return _emit("reduce_max", (a,), np.asarray(out), backward_fn)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    x = a.values
    out = np.asarray(x.sum(axis=axis))

    def backward_fn(g):
        if axis is None:
            return (np.full_like(x, 1.0) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit("reduce_sum", (a,), out, backward_fn)
