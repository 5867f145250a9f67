"""Dense reverse-mode differentiation on numpy float64 arrays.

Tensors are plain ``np.ndarray`` objects (float64, C order).  A :class:`Value`
wraps one array and records how it was produced so that :func:`backward` can
push gradients back to the leaves.  Only leaves accumulate into ``.grad``;
interior gradients live in a scratch dict for the duration of one backward
pass, so calling ``backward`` twice on the same graph doubles leaf gradients
and nothing else.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateMatrix, DomainError, NotScalar, ShapeMismatch

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def as_tensor(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor entries must be finite")
    return arr


class Value:
    """A node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Value", ...] = (),
        backward_fn: BackwardFn | None = None,
        name: str = "",
    ):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _lift(x, like: Value) -> Value:
    if isinstance(x, Value):
        return x
    if np.isscalar(x):
        return constant(np.full(like.shape, float(x)))
    return constant(x)


def constant(x) -> Value:
    return Value(as_tensor(x))


def parameter(x, name: str = "") -> Value:
    return Value(as_tensor(x), requires_grad=True, name=name)


def _node(data: np.ndarray, parents: tuple[Value, ...], fn: BackwardFn) -> Value:
    needs = any(p.requires_grad for p in parents)
    return Value(data, requires_grad=needs, parents=parents if needs else (), backward_fn=fn if needs else None)


def custom_op(data: np.ndarray, parents: Sequence[Value], fn: BackwardFn) -> Value:
    """Register an externally computed result with a hand-written backward rule."""
    return _node(np.asarray(data, dtype=np.float64), tuple(parents), fn)


# ---------------------------------------------------------------------------
# Linear algebra and structural ops


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _node(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def transpose(a: Value) -> Value:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    return _node(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Value, shape: tuple[int, ...]) -> Value:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Value], axis: int = -1) -> Value:
    if not parts:
        raise ShapeMismatch("concat of nothing")
    if len(parts) == 1:
        return parts[0]
    arrays = [p.data for p in parts]
    nd = arrays[0].ndim
    ax = axis % nd
    for arr in arrays[1:]:
        if arr.ndim != nd or any(arr.shape[i] != arrays[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeMismatch(f"concat extents differ: {[x.shape for x in arrays]}")
    cuts = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate(arrays, axis=ax), tuple(parts), back)


def take_rows(a: Value, index: np.ndarray) -> Value:
    """Row gather ``a[index]``; gradient scatters back with accumulation."""
    idx = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), back)


def take_cols(a: Value, start: int, stop: int) -> Value:
    """Column slice ``a[:, start:stop]``."""
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _node(np.ascontiguousarray(a.data[:, start:stop]), (a,), back)


def add_bias(x: Value, b: Value) -> Value:
    """``x + b`` with ``b`` (shape ``[D]``) repeated over the rows of ``x``."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"bias {b.shape} for input {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, b.shape[0]).sum(axis=0)))


def total(x: Value) -> Value:
    """Sum of all entries as a 0-d value."""
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


# ---------------------------------------------------------------------------
# Elementwise ops


def _same_shape(a: Value, b: Value, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


def add(a: Value, b: Value) -> Value:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Value, b: Value) -> Value:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Value, b: Value) -> Value:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _node(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Value, c: float) -> Value:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def log(a: Value) -> Value:
    if np.any(a.data <= 0):
        raise DomainError("log of nonpositive entry")
    A = a.data
    return _node(np.log(A), (a,), lambda g: (g / A,))


def exp(a: Value) -> Value:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def elementwise(op: str, *args: Value) -> Value:
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "log": log, "exp": exp}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def log_softmax(z: Value) -> Value:
    """Row-wise log-normalisation of a ``T x K`` matrix."""
    Z = z.data
    if Z.ndim != 2 or Z.shape[1] < 1:
        raise ShapeMismatch("log_softmax expects T x K with K >= 1")
    m = Z.max(axis=1, keepdims=True)
    shifted = Z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _node(out, (z,), lambda g: (g - probs * g.sum(axis=1, keepdims=True),))


def rms_normalize(x: Value, eps: float = 1e-8) -> Value:
    """Scale every column to unit root-mean-square over the rows."""
    X = x.data
    n = X.shape[0]
    r = np.sqrt((X * X).mean(axis=0) + eps)
    out = X / r

    def back(g):
        return (g / r - X * ((g * X).sum(axis=0) / (n * r**3)),)

    return _node(out, (x,), back)


# ---------------------------------------------------------------------------
# Backward pass


def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise NotScalar(f"loss has shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# ---------------------------------------------------------------------------
# Parameters and the semi-orthogonal constraint


@dataclass
class Parameter:
    name: str
    value: Value
    constraint: str = "none"  # "none" | "semi_orthogonal"

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @data.setter
    def data(self, arr: np.ndarray) -> None:
        self.value.data = np.asarray(arr, dtype=np.float64)

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad_or_zeros()

    def zero_grad(self) -> None:
        self.value.grad = None


def make_parameter(name: str, data, constraint: str = "none") -> Parameter:
    return Parameter(name, parameter(data, name), constraint)


def orthogonality_error(m: np.ndarray, floating: bool = True) -> float:
    """Relative Frobenius distance of ``M M^T`` from its nearest ``c I``."""
    P = m @ m.T
    tr = np.trace(P)
    if tr == 0:
        raise DegenerateMatrix("all-zero matrix")
    c = np.trace(P @ P) / tr if floating else 1.0
    target = c * np.eye(P.shape[0])
    return float(np.linalg.norm(P - target) / np.linalg.norm(target))


def semi_orthogonal_step(m: np.ndarray, floating: bool = True) -> np.ndarray:
    """One projection step pulling the rows of ``m`` toward ``M M^T = c I``.

    ``c`` is re-estimated from traces on every call unless ``floating`` is
    False, in which case the rows are pulled toward orthonormality.
    """
    m = np.asarray(m, dtype=np.float64)
    r, c_ = m.shape
    if r > c_:
        raise ShapeMismatch(f"semi-orthogonal factor needs rows <= cols, got {m.shape}")
    P = m @ m.T
    tr = np.trace(P)
    if tr == 0:
        raise DegenerateMatrix("all-zero matrix")
    c = np.trace(P @ P) / tr if floating else 1.0
    return m - (1.0 / (2.0 * c)) * (P - c * np.eye(r)) @ m


# ---------------------------------------------------------------------------
# Debug text dump


def dump_tensor(t: np.ndarray) -> str:
    t = np.asarray(t, dtype=np.float64)
    buf = io.StringIO()
    buf.write("shape: " + " ".join(str(d) for d in t.shape) + "\n")
    rows = t.reshape(-1, t.shape[-1]) if t.ndim >= 2 else t.reshape(1, -1)
    for row in rows:
        buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def load_tensor(text: str) -> np.ndarray:
    lines = text.strip("\n").split("\n")
    head = lines[0]
    if not head.startswith("shape:"):
        raise ValueError("tensor dump must start with 'shape:'")
    shape = tuple(int(d) for d in head[len("shape:"):].split())
    values = [float(v) for line in lines[1:] for v in line.split()]
    return np.array(values, dtype=np.float64).reshape(shape)


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x)
        flat[i] = old - eps
        lo = fn(x)
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
