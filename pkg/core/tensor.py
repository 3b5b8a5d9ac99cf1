"""
Tensor and Gradient Tape
Dense numpy-backed tensors with reverse-mode differentiation.

Every operation on tensors that require gradients records its inputs and a
backward closure. `grad()` walks that record from a scalar loss and returns
gradients without mutating any tensor, so replaying it is side-effect free.
"""

import contextlib
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import DimensionError, NumericError, UsageError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


# ============================================================================
# Precision and recording switches
# ============================================================================

def get_default_dtype() -> type:
    """Dtype new tensors are created with"""
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """
    Temporarily change the default dtype

    Args:
        dtype: numpy floating dtype (np.float32 for training, np.float64 for audits)
    """
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


def audit_precision():
    """64-bit mode used by gradient and equivalence audits"""
    return precision(np.float64)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording backward closures"""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


# ============================================================================
# Tensor
# ============================================================================

class Tensor:
    """
    Dense array plus the bookkeeping reverse-mode differentiation needs
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None
    ):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __getitem__(self, index): return getitem(self, index)

    # method forms
    def sum(self, axis=None, keepdims: bool = False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def swapaxes(self, a: int, b: int): return swapaxes(self, a, b)
    def relu(self): return relu(self)
    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)
    def exp(self): return exp(self)
    def log(self): return log(self)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap constants; tensors pass through unchanged"""
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# ============================================================================
# Elementwise arithmetic
# ============================================================================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _record(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _record(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _record(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    return _record(
        a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        )
    )


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent"""
    return _record(
        a.data ** exponent, (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    return _record(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1 - out * out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only ever sees non-positive arguments
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1 / (1 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1 - out),))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes only where the clamp is inactive"""
    inside = (a.data >= low) & (a.data <= high)
    return _record(np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# ============================================================================
# Shape operations
# ============================================================================

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _record(np.matmul(a.data, b.data), (a, b), backward)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return _record(
        np.swapaxes(a.data, axis1, axis2), (a,),
        lambda g: (np.swapaxes(g, axis1, axis2),)
    )


def reshape(a: Tensor, shape) -> Tensor:
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(
        part is None or part is Ellipsis or isinstance(part, (slice, int, np.integer))
        for part in parts
    )


def getitem(a: Tensor, index) -> Tensor:
    """Indexing; advanced (integer array) indices accumulate repeated rows"""
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(a.data[index], (a,), backward)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero padding along one axis"""
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(before, before + a.shape[axis])
    slicer = tuple(slicer)
    return _record(np.pad(a.data, widths), (a,), lambda g: (g[slicer],))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]`"""
    return getitem(table, np.asarray(ids, dtype=np.int64))


# ============================================================================
# Tape traversal
# ============================================================================

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def grad(
    loss: Tensor,
    params: Sequence[Tensor],
    allow_unused: bool = False
) -> List[np.ndarray]:
    """
    Gradients of a scalar loss with respect to each parameter

    Args:
        loss: Scalar tensor produced by recorded operations
        params: Tensors to differentiate against (must require gradients)
        allow_unused: Return zeros for parameters the loss does not depend on

    Returns:
        One array per parameter, each with that parameter's shape
    """
    if loss.size != 1:
        raise UsageError(f"grad needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError(f"loss is not finite: {loss.data!r}")
    for param in params:
        if not param.requires_grad:
            raise UsageError(f"parameter {param.name or param.shape} does not require gradients")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        upstream = grads.get(id(node))
        if upstream is None or node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(upstream)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    results = []
    for param in params:
        value = grads.get(id(param))
        if value is None:
            if not allow_unused:
                raise UsageError(f"parameter {param.name or param.shape} is not on the tape")
            value = np.zeros_like(param.data)
        results.append(np.array(value, dtype=param.data.dtype).reshape(param.shape))
    return results
