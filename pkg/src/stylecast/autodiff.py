"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every tensor op records its inputs and a local-gradient closure on the
output node; ``backward`` walks the resulting DAG once in reverse
topological order, accumulating gradients into every reachable tensor.
The graph is rebuilt on each forward pass, so a fresh tape exists per
training step. Elementwise ops follow numpy broadcasting; gradients of
broadcast operands are reduced back to the operand's shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # operator sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return elementwise_mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


class Parameter:
    """A named leaf tensor that always tracks gradients."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True, op=f"param:{name}")

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class ParameterSet:
    """Ordered registry of uniquely named parameters (one per model)."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: Sequence[Tensor], fn: Callable[[np.ndarray], None]) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # out-of-place so shared upstream arrays are never mutated
    t.grad = g if t.grad is None else t.grad + g


def _reduce_to(shape: tuple, g: np.ndarray) -> np.ndarray:
    """Sum g over axes that were added or broadcast, back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data, op="add")
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g))

    return _record(out, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data - b.data, op="sub")
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, -g))

    return _record(out, (a, b), fn)


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data, op="mul")
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g * b.data))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g * a.data))

    return _record(out, (a, b), fn)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, op="scale")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _record(out, (a,), fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), op="relu")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0.0))

    return _record(out, (a,), fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), op="exp")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, g * out.data)

    return _record(out, (a,), fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), op="log")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _record(out, (a,), fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    try:
        out = Tensor(np.matmul(a.data, b.data), op="matmul")
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, np.matmul(g, np.swapaxes(b.data, -1, -2))))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, np.matmul(np.swapaxes(a.data, -1, -2), g)))

    return _record(out, (a, b), fn)


def transpose(a) -> Tensor:
    """Swap the last two axes (matrix transpose on each stacked matrix)."""
    return swap_axes(a, -1, -2)


def swap_axes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, axis1, axis2), op="swap_axes")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, axis1, axis2))

    return _record(out, (a,), fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), op="reshape")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _record(out, (a,), fn)


def conv_time(x, kernels) -> Tensor:
    """Per-channel weighted sum over the time axis.

    ``x`` has shape [..., d, t] (features by time), ``kernels`` [K, t].
    out[..., c, j] = sum_t kernels[c, t] * x[..., j, t]; the time axis
    collapses, producing [..., K, d].
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.shape[-1] != kernels.shape[-1]:
        raise ShapeError(
            f"conv_time: kernel width {kernels.shape} does not match input time axis {x.shape}"
        )
    xt = np.swapaxes(x.data, -1, -2)  # [..., t, d]
    out = Tensor(np.matmul(kernels.data, xt), op="conv_time")

    def fn(g):
        if kernels.requires_grad:
            _accumulate(kernels, _reduce_to(kernels.shape, np.matmul(g, x.data)))
        if x.requires_grad:
            dxt = np.matmul(kernels.data.T, g)
            _accumulate(x, _reduce_to(x.shape, np.swapaxes(dxt, -1, -2)))

    return _record(out, (x, kernels), fn)


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    try:
        out = Tensor(np.concatenate([t.data for t in ts], axis=axis), op="concat")
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    ax = axis % out.ndim
    offsets = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def fn(g):
        pieces = np.split(g, offsets, axis=ax)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                _accumulate(t, piece)

    return _record(out, ts, fn)


def concat_lastaxis(tensors: Iterable) -> Tensor:
    return concat(tensors, axis=-1)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx], op="slice")

    def fn(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[idx] = g
            _accumulate(a, buf)

    return _record(out, (a,), fn)


def select_rows(a, index) -> Tensor:
    """Pick one row per leading entry: out[b] = a[b, index[b]].

    ``a`` has shape [B, K, ...]; ``index`` is an int array of length B.
    """
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"select_rows: index shape {idx.shape} does not match {a.shape}")
    batch = np.arange(a.shape[0])
    out = Tensor(a.data[batch, idx], op="select_rows")

    def fn(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, (batch, idx), g)
            _accumulate(a, buf)

    return _record(out, (a,), fn)


def broadcast_rows(a, rows: int) -> Tensor:
    """Tile a feature row vector into `rows` identical rows."""
    a = as_tensor(a)
    if a.ndim == 1:
        target = (rows, a.shape[0])
    elif a.ndim == 2 and a.shape[0] == 1:
        target = (rows, a.shape[1])
    else:
        raise ShapeError(f"broadcast_rows: expected a row vector, got {a.shape}")
    out = Tensor(np.broadcast_to(a.data, target).copy(), op="broadcast_rows")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g))

    return _record(out, (a,), fn)


# ---------------------------------------------------------------------------
# normalization / reductions


def softmax_lastaxis(a) -> Tensor:
    """Probability vector along the last axis, max-subtracted for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, op="softmax")

    def fn(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(a, y * (g - inner))

    return _record(out, (a,), fn)


def layer_normalize(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along the last axis.

    Variance gets +eps before the square root, so constant rows map to
    zeros rather than NaN. Affine gain/bias, when wanted, are applied by
    the caller.
    """
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y, op="layer_normalize")

    def fn(g):
        if a.requires_grad:
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            _accumulate(a, inv * (g - gm - y * gym))

    return _record(out, (a,), fn)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(), op="sum")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _record(out, (a,), fn)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = Tensor(a.data.mean(), op="mean")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _record(out, (a,), fn)


def l2_norm_rows(a) -> Tensor:
    """Euclidean norm of each slice along the last axis: [..., n] -> [...]."""
    a = as_tensor(a)
    norms = np.sqrt((a.data**2).sum(axis=-1))
    out = Tensor(norms, op="l2_norm_rows")

    def fn(g):
        if a.requires_grad:
            safe = np.where(norms > 0.0, norms, 1.0)
            unit = a.data / safe[..., None]
            unit = np.where(norms[..., None] > 0.0, unit, 0.0)
            _accumulate(a, g[..., None] * unit)

    return _record(out, (a,), fn)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents precede consumers


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor reachable from a scalar loss.

    Each recorded op's closure runs exactly once, in reverse topological
    order; tensors feeding several consumers receive the sum of all
    contributions.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def first_nonfinite(root: Tensor) -> Optional[Tensor]:
    """Earliest tensor in the graph under `root` holding NaN/Inf, if any."""
    for t in _topo_order(root):
        if not np.isfinite(t.data).all():
            return t
    return None
