"""Simplified PointNet: shared per-point MLP, max-pool, then a linear layer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError
from .geometry.types import as_points
from .tensor import Linear, Module, Tensor, max_pool_points
from .tensor.nn import BatchNorm1d
from .tensor.core import relu


class PointSetEncoder(Module):
    """Maps ``(N, 3)`` or ``(B, N, 3)`` clouds to ``(F,)`` / ``(B, F)`` features.

    Each hidden layer is Linear -> BatchNorm -> ReLU applied independently to
    every point; batch statistics are taken over all points in the batch.
    """

    def __init__(self, rng: np.random.Generator, widths: Sequence[int] = (64, 128, 1024), feature_size: int = 1024):
        dims = (3,) + tuple(widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.norms = [BatchNorm1d(w) for w in widths]
        self.head = Linear(dims[-1], feature_size, rng)
        self.feature_size = feature_size

    def forward(self, points) -> Tensor:
        x = points if isinstance(points, Tensor) else Tensor(as_points(points))
        if x.ndim not in (2, 3) or x.shape[-1] != 3:
            raise DimensionError(f"encoder expects (N, 3) or (B, N, 3) points, got {x.shape}")
        if x.shape[-2] == 0:
            raise EmptyInputError("cannot encode an empty point cloud")
        h = x
        for layer, norm in zip(self.layers, self.norms):
            h = relu(norm(layer(h)))
        pooled, _ = max_pool_points(h)
        return self.head(pooled)


def encode(encoder: PointSetEncoder, points) -> Tensor:
    return encoder(points)
