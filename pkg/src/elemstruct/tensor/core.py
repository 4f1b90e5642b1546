"""Dense tensors with reverse-mode gradient accumulation.

Only the operations needed by the point-set networks are provided. Every
operation records a closure that maps the upstream gradient to gradients of
its inputs; :meth:`Tensor.backward` replays those closures in reverse
topological order and *adds* into ``.grad`` so that a parameter used in
several places receives the sum of its contributions.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, EmptyInputError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. float64 for checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional gradient buffer and graph links."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = ""

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    # -- gradient bookkeeping ---------------------------------------------
    def _accumulate(self, grad: np.ndarray, fresh: bool = False) -> None:
        # fresh: the caller allocated ``grad`` and keeps no reference to it
        if self.grad is None:
            if fresh and grad.dtype == self.data.dtype and grad.shape == self.data.shape:
                self.grad = grad
            else:
                self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``.grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate buffers are not needed once propagated
                if node._parents:
                    node.grad = None if node is not self else node.grad

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- elementwise and broadcasting ops --------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return Tensor._result(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return Tensor._result(a.data**exponent, (a,), backward, "pow")


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    out = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(np.where(out > 0, g, 0).astype(g.dtype, copy=False), fresh=True)

    return Tensor._result(out, (a,), backward, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return Tensor._result(out, (a,), backward, "tanh")


# -- reductions and shape ops ----------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._result(np.asarray(out), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def sorted_mean(a: Tensor) -> Tensor:
    """Mean of all entries, summed after sorting along the last axis.

    The value is then bitwise independent of the order of that axis, which
    plain pairwise summation does not guarantee.
    """
    n = a.data.size

    def backward(g):
        a._accumulate(np.full(a.shape, g / n, dtype=a.dtype), fresh=True)

    value = np.asarray(np.sort(a.data, axis=-1).mean(), dtype=a.dtype)
    return Tensor._result(value, (a,), backward, "sorted_mean")


def reshape(a: Tensor, shape) -> Tensor:
    original = a.shape

    def backward(g):
        a._accumulate(g.reshape(original))

    return Tensor._result(a.data.reshape(shape), (a,), backward, "reshape")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    def backward(g):
        a._accumulate(np.swapaxes(g, ax1, ax2))

    return Tensor._result(np.swapaxes(a.data, ax1, ax2), (a,), backward, "swapaxes")


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, key) -> Tensor:
    """Indexing; integer-array indices gather and scatter-add on backward."""
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        a._accumulate(full)

    return Tensor._result(a.data[key], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Broadcasting matrix product of tensors with ndim >= 2."""
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            b._accumulate(gb)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x`` (any leading dims)."""
    x = as_tensor(x, weight.dtype)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    n_in, n_out = weight.shape
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, n_out)
        if x.requires_grad:
            x._accumulate((g2 @ weight.data.T).reshape(x.shape), fresh=True)
        if weight.requires_grad:
            weight._accumulate(x2.T @ g2, fresh=True)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out.reshape(x.shape[:-1] + (n_out,)), parents, backward, "linear")


# -- pooling and normalisation ---------------------------------------------

def max_pool_points(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Channelwise max over the point axis (second to last).

    Returns the pooled tensor of shape ``x.shape[:-2] + (C,)`` and the argmax
    row per channel. Ties resolve to the lowest row index and only that row
    receives gradient.
    """
    if x.ndim < 2:
        raise DimensionError(f"max_pool_points expects (..., N, C), got {x.shape}")
    if x.shape[-2] == 0:
        raise EmptyInputError("max_pool_points over zero points")
    idx = np.argmax(x.data, axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx[..., None, :], g[..., None, :], axis=-2)
        x._accumulate(full, fresh=True)

    return Tensor._result(out, (x,), backward, "max_pool"), idx


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over every leading axis of ``x``.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional); in eval mode the
    running buffers are used and nothing is mutated.
    """
    channels = x.shape[-1]
    if weight.shape != (channels,):
        raise DimensionError(f"batch_norm: {channels} channels but weight shape {weight.shape}")
    x2 = x.data.reshape(-1, channels)
    rows = x2.shape[0]
    if training:
        if rows < 2:
            raise DimensionError("batch_norm in train mode needs at least 2 rows per channel")
        mean = x2.mean(axis=0)
        xhat = x2 - mean
        var = np.einsum("ij,ij->j", xhat, xhat) / rows
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * rows / (rows - 1)
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        xhat = x2 - mean
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat *= inv_std
    out = xhat * weight.data
    out += bias.data

    def backward(g):
        g2 = g.reshape(-1, channels)
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if weight.requires_grad:
            weight._accumulate(np.einsum("ij,ij->j", g2, xhat))
        if x.requires_grad:
            gx = g2 * weight.data
            if training:
                proj = np.einsum("ij,ij->j", gx, xhat) / rows
                gx -= gx.mean(axis=0)
                gx -= xhat * proj
            gx *= inv_std
            x._accumulate(gx.reshape(x.shape), fresh=True)

    return Tensor._result(out.reshape(x.shape), (x, weight, bias), backward, "batch_norm")


def stack_grads(tensors: Iterable[Tensor]) -> np.ndarray:
    """Flatten and concatenate gradients (None counts as zeros)."""
    parts = [np.zeros(t.size) if t.grad is None else t.grad.ravel() for t in tensors]
    return np.concatenate(parts) if parts else np.zeros(0)
