"""Dense f64 tensors with tape-based reverse-mode differentiation, plus Adam.

Operations are recorded on the innermost active :class:`Tape` whenever one of
their inputs requires a gradient::

    with Tape() as tape:
        y = dc.sum(dc.tanh(x))
    grads = backward(tape, y)
    grads[x]

There is no implicit broadcasting. Shape adaptation goes through
``broadcast_rows`` / ``broadcast_cols`` so a mismatched operand fails loudly
instead of silently expanding.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An f64 array, optionally tracked for differentiation."""

    __slots__ = ("values", "requires_grad", "name", "_tape", "_index")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value in tensor {name or ''}".strip())
        self.values = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None
        self._index = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray, what: str) -> "Tensor":
        # NaN/inf anywhere propagates into the sum; overflow of the sum itself
        # only happens for magnitudes that are unusable anyway
        if not math.isfinite(np.add.reduce(arr, axis=None)):
            raise NumericError(f"{what} produced a non-finite result")
        t = cls.__new__(cls)
        t.values = arr
        t.requires_grad = False
        t.name = None
        t._tape = None
        t._index = -1
        return t

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; operands must be Tensors of equal shape
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications.

    Each node is ``(output, inputs, vjp)`` where ``vjp`` maps the output
    cotangent to one cotangent per input (``None`` where not needed).
    Nodes are appended in execution order, so the list is already topological.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tape exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        out.requires_grad = True
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append((out, inputs, vjp))


class Gradients(Mapping):
    """Result of :func:`backward`; indexing by a tensor returns its gradient.

    Tensors that the root does not depend on get a zero array of their shape.
    """

    def __init__(self, by_id: dict, tensors: dict):
        self._by_id = by_id
        self._tensors = tensors

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._by_id.get(id(tensor))
        if g is None or self._tensors.get(id(tensor)) is not tensor:
            return np.zeros(tensor.shape)
        return g

    def __contains__(self, tensor) -> bool:
        return isinstance(tensor, Tensor) and self._tensors.get(id(tensor)) is tensor

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def leaves(self) -> list[Tensor]:
        return [t for t in self._tensors.values() if t._tape is None]


def backward(tape: Tape, root: Tensor) -> Gradients:
    """Reverse sweep from a scalar ``root`` recorded on ``tape``.

    Gradients are returned for every tensor reached with ``requires_grad``,
    intermediates included (the perturbation extractor needs d loss / d x_tilde).
    """
    if not isinstance(root, Tensor) or root._tape is not tape:
        raise UsageError("root was not produced on this tape")
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.ones(root.shape)}
    seen = {id(root): root}
    nodes = tape.nodes
    for idx in range(root._index, -1, -1):
        out, inputs, vjp = nodes[idx]
        g = grads.get(id(out))
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            prev = grads.get(key)
            if prev is None:
                grads[key] = gi
                seen[key] = t
            else:
                grads[key] = prev + gi
    return Gradients(grads, seen)


# ---------------------------------------------------------------------------
# primitives


def _emit(arr: np.ndarray, inputs: tuple, vjp: Callable, what: str) -> Tensor:
    out = Tensor._wrap(arr, what)
    tape = active_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                tape._record(out, inputs, vjp)
                break
    return out


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.values, b.values
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.values + b.values, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.values, b.values
    return _emit(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    A, B = a.values, b.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = A / B
    return _emit(out, (a, b), lambda g: (g / B, -g * out / B), "div")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    arrs = [t.values for t in tensors]
    if any(x.ndim != arrs[0].ndim for x in arrs):
        raise DimensionError("concat: rank mismatch")
    try:
        out = np.concatenate(arrs, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrs])[:-1]
    return _emit(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.values)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x: Tensor) -> Tensor:
    X = x.values
    return _emit(np.logaddexp(0.0, X), (x,), lambda g: (g * _sigmoid(X),), "softplus")


def square(x: Tensor) -> Tensor:
    X = x.values
    return _emit(X * X, (x,), lambda g: (2.0 * g * X,), "square")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.values)
    return _emit(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    X = x.values
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(X)
    return _emit(y, (x,), lambda g: (g / X,), "log")


def max0(x: Tensor) -> Tensor:
    X = x.values
    mask = X > 0
    return _emit(np.where(mask, X, 0.0), (x,), lambda g: (g * mask,), "max0")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.values * c, (x,), lambda g: (g * c,), "scale")


def shift(x: Tensor, c: float) -> Tensor:
    """Add a constant scalar."""
    c = float(c)
    return _emit(x.values + c, (x,), lambda g: (g,), "shift")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    X = x.values
    if axis is None:
        shape = X.shape
        return _emit(np.asarray(X.sum()), (x,), lambda g: (np.full(shape, g),), "sum")
    if X.ndim != 2 or axis not in (0, 1):
        raise DimensionError(f"sum over axis {axis} needs a matrix, got {x.shape}")
    shape = X.shape
    out = X.sum(axis=axis, keepdims=True)
    return _emit(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    X = x.values
    n = X.size
    if n == 0:
        raise DimensionError("mean of empty tensor")
    shape = X.shape
    return _emit(np.asarray(X.mean()), (x,), lambda g: (np.full(shape, g / n),), "mean")


def l2_norm(x: Tensor, axis: int | None = None) -> Tensor:
    """Euclidean norm of the whole tensor, or of each row when ``axis=1``.

    The gradient at the zero vector is taken as zero.
    """
    X = x.values
    if axis is None:
        n = np.asarray(np.sqrt(np.sum(X * X)))
    elif axis == 1 and X.ndim == 2:
        n = np.sqrt(np.sum(X * X, axis=1, keepdims=True))
    else:
        raise DimensionError(f"l2_norm axis={axis} on shape {x.shape}")

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(n > 0, g / n, 0.0)
        return (X * r,)

    return _emit(n, (x,), vjp, "l2_norm")


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {x.shape}")
    return _emit(x.values.T.copy(), (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.values.shape
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {old} -> {shape}: {exc}") from None
    return _emit(out, (x,), lambda g: (g.reshape(old),), "reshape")


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a ``1 x K`` row ``n`` times."""
    if x.values.ndim != 2 or x.values.shape[0] != 1:
        raise DimensionError(f"broadcast_rows needs a 1xK row, got {x.shape}")
    out = np.repeat(x.values, n, axis=0)
    return _emit(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),), "broadcast_rows")


def broadcast_cols(x: Tensor, k: int) -> Tensor:
    """Repeat an ``N x 1`` column ``k`` times."""
    if x.values.ndim != 2 or x.values.shape[1] != 1:
        raise DimensionError(f"broadcast_cols needs an Nx1 column, got {x.shape}")
    out = np.repeat(x.values, k, axis=1)
    return _emit(out, (x,), lambda g: (g.sum(axis=1, keepdims=True),), "broadcast_cols")


def select_step(x: Tensor, t: int) -> Tensor:
    """Slice ``x[:, t, :]`` out of an ``N x T x d`` tensor."""
    X = x.values
    if X.ndim != 3 or not 0 <= t < X.shape[1]:
        raise DimensionError(f"select_step({t}) on shape {x.shape}")
    shape = X.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, t, :] = g
        return (full,)

    return _emit(X[:, t, :].copy(), (x,), vjp, "select_step")


PRIMITIVES = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div, "concat": concat,
    "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus, "square": square,
    "sum": sum, "mean": mean, "max0": max0, "l2_norm": l2_norm, "scale": scale,
    "shift": shift, "exp": exp, "log": log, "transpose": transpose, "reshape": reshape,
    "broadcast_rows": broadcast_rows, "broadcast_cols": broadcast_cols,
    "select_step": select_step,
}


def forward_primitive(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise UsageError(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParameterStore:
    """Named, ordered collection of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def subset(self, prefix: str) -> "ParameterStore":
        """View over the parameters whose names start with ``prefix`` (tensors are shared)."""
        view = ParameterStore()
        view._params = {n: t for n, t in self._params.items() if n.startswith(prefix)}
        return view

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self._params.items()}

    def load(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.values.shape:
                raise DimensionError(f"{name}: stored {arr.shape}, expected {t.shape}")
            t.values[...] = arr

    def gradient_map(self, grads: Gradients) -> dict[str, np.ndarray]:
        return {n: grads[t] for n, t in self._params.items()}


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    numeric_floor: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: ParameterStore, grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    if lr <= 0:
        raise UsageError(f"learning rate must be positive, got {lr}")
    missing = [n for n in params if n not in grads]
    if missing:
        raise UsageError(f"no gradient for {missing}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise DimensionError(f"{name}: grad {np.shape(grads[name])} vs param {p.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros(p.shape)
            state.second_moment[name] = np.zeros(p.shape)
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.numeric_floor)


# ---------------------------------------------------------------------------
# finite-difference helpers (used by tests and the verify command)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` with respect to array ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """max |a - n| scaled by the larger of the two max-magnitudes."""
    a = np.concatenate([np.ravel(x) for x in analytic]) if isinstance(analytic, (list, tuple)) else np.ravel(analytic)
    n = np.concatenate([np.ravel(x) for x in numeric]) if isinstance(numeric, (list, tuple)) else np.ravel(numeric)
    denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), 1e-300)
    return float(np.max(np.abs(a - n), initial=0.0) / denom)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
