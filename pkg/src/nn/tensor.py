"""
Dense float64 tensor with reverse-mode automatic differentiation.

Every primitive records its parents and a closure mapping the output
gradient to one gradient per parent. `backward()` walks the graph once in
reverse topological order and accumulates into leaf `.grad` buffers.
"""
import logging
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from ..core.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True

ArrayLike = Union["Tensor", np.ndarray, float, int]
GELU_C = np.sqrt(2.0 / np.pi)


@contextmanager
def no_grad():
    """Ops inside this block record no graph."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: "Tensor", b: "Tensor"):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast",
                             {"op": op, "left": list(a.shape), "right": list(b.shape)}) from None


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def as_tensor(x: ArrayLike) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_ufunc__ = None  # numpy defers to the reflected operators

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    # --- graph construction ---

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # --- backward pass ---

    def _topological_order(self) -> List["Tensor"]:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar root, got shape {self.shape}",
                                 {"shape": list(self.shape)})
        if not self.requires_grad:
            return
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # --- arithmetic ---

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast("add", self, other)
        return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast("sub", self, other)
        return Tensor._make(self.data - other.data, (self, other), lambda g: (g, -g), "sub")

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast("mul", self, other)
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast("div", self, other)
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)), "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p: float) -> "Tensor":
        a = self.data
        return Tensor._make(a ** p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, as_tensor(other))

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)
        return Tensor._make(self.data[index], (self,), backward, "getitem")

    # --- shape ---

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    # --- reductions ---

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape),)
        return Tensor._make(self.data.sum(axis=axes, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    # --- elementwise ---

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self) -> "Tensor":
        y = np.sqrt(self.data)
        return Tensor._make(y, (self,), lambda g: (g * 0.5 / y,), "sqrt")

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.abs(a), (self,), lambda g: (g * np.sign(a),), "abs")

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1.0 - y * y),), "tanh")

    def relu(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.maximum(a, 0.0), (self,), lambda g: (g * (a > 0),), "relu")

    def sigmoid(self) -> "Tensor":
        y = special.expit(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y * (1.0 - y),), "sigmoid")

    def softplus(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.logaddexp(0.0, a), (self,), lambda g: (g * special.expit(a),), "softplus")

    def log_sigmoid(self) -> "Tensor":
        a = self.data
        return Tensor._make(-np.logaddexp(0.0, -a), (self,), lambda g: (g * special.expit(-a),), "log_sigmoid")

    def gelu(self) -> "Tensor":
        """tanh approximation."""
        a = self.data
        t = np.tanh(GELU_C * (a + 0.044715 * a ** 3))

        def backward(g):
            dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * a * a)
            return (g * (0.5 * (1.0 + t) + 0.5 * a * dt),)
        return Tensor._make(0.5 * a * (1.0 + t), (self,), backward, "gelu")

    def maximum(self, floor: float) -> "Tensor":
        a = self.data
        return Tensor._make(np.maximum(a, floor), (self,), lambda g: (g * (a >= floor),), "maximum")

    def softmax(self, axis: int = -1) -> "Tensor":
        y = special.softmax(self.data, axis=axis)

        def backward(g):
            return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
        return Tensor._make(y, (self,), backward, "softmax")

    def log_softmax(self, axis: int = -1) -> "Tensor":
        y = special.log_softmax(self.data, axis=axis)

        def backward(g):
            return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
        return Tensor._make(y, (self,), backward, "log_softmax")


class Parameter(Tensor):
    """Leaf tensor that optimizers update."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


# ==========================================
#           MULTI-INPUT PRIMITIVES
# ==========================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible",
                             {"op": "matmul", "left": list(a.shape), "right": list(b.shape)})
    x, w = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(w, -1, -2), np.swapaxes(x, -1, -2) @ g
    return Tensor._make(x @ w, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != ax]
        first = [s for i, s in enumerate(tensors[0].shape) if i != ax]
        if t.ndim != ndim or other != first:
            raise DimensionError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}",
                                 {"op": "concat", "left": list(tensors[0].shape), "right": list(t.shape)})
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([as_tensor(t).reshape(_expand_shape(as_tensor(t).shape, axis)) for t in tensors], axis=axis)


def _expand_shape(shape: Tuple[int, ...], axis: int) -> Tuple[int, ...]:
    ax = axis % (len(shape) + 1)
    return shape[:ax] + (1,) + shape[ax:]


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """
    x: (B, C_in, T), w: (C_out, C_in, K), b: (C_out,). No padding:
    T_out = (T - K) // stride + 1.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} and kernel {w.shape} are incompatible",
                             {"op": "conv1d", "left": list(x.shape), "right": list(w.shape)})
    k = w.shape[2]
    t_in = x.shape[2]
    if t_in < k:
        raise DimensionError(f"conv1d: input length {t_in} shorter than kernel {k}",
                             {"op": "conv1d", "left": list(x.shape), "right": list(w.shape)})
    t_out = (t_in - k) // stride + 1
    windows = sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :][:, :, :t_out, :]
    kernel = w.data
    out = np.einsum("bctk,ock->bot", windows, kernel)
    if b is not None:
        out = out + b.data[None, :, None]

    def backward(g):
        gw = np.einsum("bot,bctk->ock", g, windows)
        gx = np.zeros(x.shape)
        for j in range(k):
            gx[:, :, j:j + stride * (t_out - 1) + 1:stride] += np.einsum("bot,oc->bct", g, kernel[:, :, j])
        gb = g.sum(axis=(0, 2)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, backward, "conv1d")


def layer_norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalizes the last axis to zero mean, unit variance (no affine)."""
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(a.var(axis=-1, keepdims=True) + eps)
    xhat = (a - mu) * inv
    n = a.shape[-1]

    def backward(g):
        return (inv / n * (n * g - g.sum(axis=-1, keepdims=True)
                           - xhat * (g * xhat).sum(axis=-1, keepdims=True)),)
    return Tensor._make(xhat, (x,), backward, "layer_norm")


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep
