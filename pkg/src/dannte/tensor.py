"""Dense float64 tensors with a recorded operation tape for reverse-mode AD.

A :class:`Tape` records every operation whose inputs include a watched
tensor. Tensors without a tape are constants; operations on constants are
evaluated eagerly and never recorded. Broadcasting is limited to
scalar-with-tensor; row-wise bias addition has its own explicit operation.

Example::

    tape = Tape()
    w = tape.watch(np.ones((3, 1)))
    loss = reduce_mean(square(Tensor(x) @ w - Tensor(y)))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from numbers import Real
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    kind: str
    inputs: tuple[Optional[int], ...]
    backward: Optional[Backward]
    shape: tuple[int, ...]
    name: Optional[str] = None


class Tensor:
    """A float64 array, optionally bound to a node of a :class:`Tape`."""

    __slots__ = ("values", "tape", "node")
    __array_priority__ = 1000

    def __init__(self, values, tape: Optional["Tape"] = None, node: Optional[int] = None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0 or any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.values = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Tape:
    """Ordered record of operations, swept in reverse by :meth:`backward`.

    Node ids are list positions, so inputs always precede their consumers.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.backward_calls = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, values, name: Optional[str] = None) -> Tensor:
        """Register ``values`` as a differentiable leaf."""
        t = Tensor(values)
        t.tape = self
        t.node = self._append(Node("leaf", (), None, t.shape, name))
        return t

    def record(self, kind: str, inputs: Sequence, values, backward: Backward) -> Tensor:
        """Record a custom operation.

        ``backward`` maps the output gradient to one gradient (or None) per
        entry of ``inputs``. Non-tensor inputs are treated as constants.
        """
        ids = []
        for x in inputs:
            if isinstance(x, Tensor) and x.tape is not None:
                if x.tape is not self:
                    raise ContractError("operands belong to different tapes")
                ids.append(x.node)
            else:
                ids.append(None)
        out = Tensor(values)
        out.tape = self
        out.node = self._append(Node(kind, tuple(ids), backward, out.shape))
        return out

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def count(self, kind: Optional[str] = None):
        """Number of recorded nodes of ``kind``; a Counter of all kinds if None."""
        tally = Counter(n.kind for n in self.nodes)
        return tally if kind is None else tally[kind]

    def backward(self, loss: Tensor) -> "Gradients":
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if loss.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.node] = np.ones((), dtype=np.float64)
        for idx in range(loss.node, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.backward is None:
                continue
            for nid, ig in zip(node.inputs, node.backward(g)):
                if nid is None or ig is None:
                    continue
                grads[nid] = ig if grads[nid] is None else grads[nid] + ig
        self.backward_calls += 1
        return Gradients(self, grads)


class Gradients:
    """Per-node gradients after a backward sweep; unreachable nodes read as zero."""

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape:
            raise ContractError("tensor is not on this tape")
        g = self._grads[t.node]
        if g is None:
            return np.zeros(self._tape.nodes[t.node].shape)
        return np.asarray(g, dtype=np.float64).reshape(self._tape.nodes[t.node].shape)

    def reached(self, t: Tensor) -> bool:
        return self._grads[t.node] is not None


# --------------------------------------------------------------------------
# operations


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Real):
        return Tensor(float(x))
    return Tensor(x)


def _tape_of(*xs) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands belong to different tapes")
    return tape


def _emit(kind, inputs, values, backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(values)
    return tape.record(kind, inputs, values, backward)


def _binary_shape(kind: str, a: Tensor, b: Tensor):
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting)")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.values + b.values, bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), a.values - b.values, bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _emit("mul", (a, b), a.values * b.values, bw)


def div(a, c) -> Tensor:
    """Divide by a constant scalar."""
    if isinstance(c, Tensor):
        if c.tape is not None or c.shape != ():
            raise ContractError("div supports only a constant scalar divisor")
        c = float(c.values)
    a = _lift(a)
    c = float(c)
    return _emit("div", (a,), a.values / c, lambda g: (g / c,))


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit("neg", (a,), -a.values, lambda g: (-g,))


def square(a) -> Tensor:
    a = _lift(a)
    return _emit("square", (a,), a.values * a.values, lambda g: (2.0 * a.values * g,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.values)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = _sigmoid(a.values)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values <= 0.0) or np.any(np.isnan(a.values)):
        bad = float(np.min(a.values)) if not np.any(np.isnan(a.values)) else float("nan")
        raise DomainError(f"log of non-positive value (min {bad})")
    return _emit("log", (a,), np.log(a.values), lambda g: (g / a.values,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the input was inside."""
    a = _lift(a)
    inside = (a.values >= lo) & (a.values <= hi)
    return _emit("clamp", (a,), np.clip(a.values, lo, hi), lambda g: (g * inside,))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.values.T, a.values.T @ g

    return _emit("matmul", (a, b), a.values @ b.values, bw)


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit("transpose", (a,), a.values.T.copy(), lambda g: (g.T,))


def add_bias(x, b) -> Tensor:
    """Add a length-n vector to every row of a (rows, n) matrix."""
    x, b = _lift(x), _lift(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to rows of {x.shape}")
    return _emit("add_bias", (x, b), x.values + b.values, lambda g: (g, g.sum(axis=0)))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    src = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _emit("reshape", (a,), out, lambda g: (g.reshape(src),))


def take(a, index) -> Tensor:
    """NumPy-style indexing; repeated indices accumulate in the backward pass."""
    a = _lift(a)
    out = a.values[index]

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", (a,), np.array(out, dtype=np.float64), bw)


def reduce_sum(a) -> Tensor:
    a = _lift(a)
    shape = a.shape
    return _emit("reduce_sum", (a,), np.sum(a.values), lambda g: (np.full(shape, float(g)),))


def reduce_mean(a) -> Tensor:
    a = _lift(a)
    shape, n = a.shape, a.size
    return _emit("reduce_mean", (a,), np.mean(a.values), lambda g: (np.full(shape, float(g) / n),))


# --------------------------------------------------------------------------
# finite-difference harness


def numeric_gradient(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x0 = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.empty_like(x0)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xp[idx] += eps
        xm = x0.copy()
        xm[idx] -= eps
        grad[idx] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * eps)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    x0 = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = Tape()
    xt = tape.watch(x0)
    analytic = tape.backward(f(xt))[xt]
    numeric = numeric_gradient(f, x0, eps)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
