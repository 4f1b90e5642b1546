"""Parameter containers and the few layer types the networks are built from."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .core import Tensor, batch_norm, get_default_dtype, linear, relu, tanh


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal module tree.

    Attributes holding a :class:`Parameter`, a :class:`Module`, or a list of
    modules are discovered automatically; non-trainable state (batch-norm
    running statistics) is registered with :meth:`register_buffer`.
    Parameter paths are dotted attribute names, e.g. ``encoder.layers.0.weight``.
    """

    training: bool = True

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        if "_buffers" not in self.__dict__:
            self.__dict__["_buffers"] = {}
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.__dict__.get("_buffers", {}).items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (e.g. to float64 for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        bufs = self.__dict__.get("_buffers", {})
        for name in bufs:
            bufs[name] = bufs[name].astype(dtype)
        for _, child in self._children():
            child._cast_buffers(dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class Linear(Module):
    """Affine layer; weights uniform in +-sqrt(1/fan_in), zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = np.sqrt(1.0 / n_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Batch normalisation over the channel (last) axis."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(
            x,
            self.weight,
            self.bias,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class MLP(Module):
    """Stack of Linear layers with ReLU between them.

    ``widths`` includes input and output sizes. Hidden layers optionally get
    batch norm before the ReLU; the last layer gets ``final`` ("none" or
    "tanh") and never batch norm.
    """

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        batchnorm: bool = False,
        final: str = "none",
    ):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        if final not in ("none", "tanh"):
            raise ValueError(f"unknown final activation {final!r}")
        self.widths = tuple(int(w) for w in widths)
        self.final = final
        self.layers = [Linear(a, b, rng) for a, b in zip(self.widths[:-1], self.widths[1:])]
        self.norms = [BatchNorm1d(w) for w in self.widths[1:-1]] if batchnorm else []

    def forward(self, x):
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last:
                if self.norms:
                    h = self.norms[i](h)
                h = relu(h)
        if self.final == "tanh":
            h = tanh(h)
        return h


def count(module: Module) -> int:
    """Number of trainable scalars in ``module``."""
    return int(sum(p.size for p in module.parameters()))
