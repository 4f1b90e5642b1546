"""Shape-conditioned adjustment modules placing a structure in 3D."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError
from .tensor import MLP, BatchNorm1d, Linear, Module, Parameter, Tensor, linear, matmul, relu, tanh


def _as_structure(points) -> Tensor:
    return points if isinstance(points, Tensor) else Tensor(np.asarray(points))


def _check_feature(feature: Tensor, size: int) -> Tensor:
    if feature.ndim == 1:
        feature = feature.reshape(1, -1)
    if feature.shape[-1] != size:
        raise DimensionError(f"feature has length {feature.shape[-1]}, adjustment expects {size}")
    return feature


def apply_affine(A: Tensor, b: Tensor, points: Tensor) -> Tensor:
    """``A @ e + b`` for every structure point; A is (B, 3, d), b is (B, 3)."""
    d = points.shape[-1]
    if points.ndim == 2:
        points = points.reshape(1, points.shape[0], d)
    out = matmul(points, A.swapaxes(1, 2))
    return out + b.reshape(b.shape[0], 1, 3)


class LinearAdjustment(Module):
    """Per-shape affine map predicted from the shape feature.

    A hypernetwork ``F -> 512 -> 512 -> 3 (d_e + 1)`` (BatchNorm + ReLU on the
    hidden layers, tanh on the output) produces a 3 x d_e matrix and a
    translation, so every parameter lies in (-1, 1).

    With ``identity_bias`` the output layer's bias starts so that the
    predicted map is about ``0.76 * I`` (tanh of 1 on the diagonal) instead of
    the zero map, and its weights are scaled by 0.1 so every shape starts
    close to that map. Fitting an affine map by Chamfer descent from the zero map
    lands in poor local minima; from near the identity it converges.
    """

    kind = "linear"

    def __init__(
        self,
        feature_size: int,
        dim: int,
        rng: np.random.Generator,
        widths: Sequence[int] = (512, 512),
        identity_bias: bool = True,
    ):
        self.feature_size = feature_size
        self.dim = dim
        self.hyper = MLP((feature_size,) + tuple(widths) + (3 * (dim + 1),), rng, batchnorm=True, final="tanh")
        if identity_bias:
            last = self.hyper.layers[-1]
            last.weight.data *= 0.1
            bias = last.bias.data
            rows = np.arange(min(3, dim))
            bias[rows * dim + rows] = 1.0

    def predict(self, feature: Tensor) -> tuple[Tensor, Tensor]:
        feature = _check_feature(feature, self.feature_size)
        params = self.hyper(feature)
        n = feature.shape[0]
        A = params[:, : 3 * self.dim].reshape(n, 3, self.dim)
        b = params[:, 3 * self.dim :]
        return A, b

    def forward(self, feature: Tensor, points) -> Tensor:
        e = _as_structure(points)
        if e.shape[-1] != self.dim:
            raise DimensionError(f"structure points are {e.shape[-1]}-d, adjustment expects {self.dim}")
        A, b = self.predict(feature)
        return apply_affine(A, b, e)


class MLPAdjustment(Module):
    """MLP on the concatenation ``[e, f(Z)]`` producing a 3D point.

    The first layer's weight is split into its structure-point rows and its
    feature rows; the feature half is evaluated once per shape and broadcast
    over points, which is the same affine map as on the concatenated vector.
    """

    kind = "mlp"

    def __init__(
        self,
        feature_size: int,
        dim: int,
        rng: np.random.Generator,
        widths: Sequence[int] = (1024, 512, 256, 128),
    ):
        self.feature_size = feature_size
        self.dim = dim
        widths = tuple(widths)
        self.first = Linear(dim + feature_size, widths[0], rng)
        self.first_norm = BatchNorm1d(widths[0])
        # hidden widths[1:] are normalised inside `rest`
        self.rest = MLP(widths + (3,), rng, batchnorm=True, final="tanh")

    def forward(self, feature: Tensor, points) -> Tensor:
        feature = _check_feature(feature, self.feature_size)
        e = _as_structure(points)
        if e.shape[-1] != self.dim:
            raise DimensionError(f"structure points are {e.shape[-1]}-d, adjustment expects {self.dim}")
        w = self.first.weight
        point_part = linear(e, w[: self.dim])  # (N, h) or (B, N, h)
        shape_part = linear(feature, w[self.dim :], self.first.bias)  # (B, h)
        h = point_part + shape_part.reshape(shape_part.shape[0], 1, shape_part.shape[1])
        h = relu(self.first_norm(h))
        return self.rest(h)


def linear_adjust(module: LinearAdjustment, feature, structure_points) -> Tensor:
    return module(feature, structure_points)


def mlp_adjust(module: MLPAdjustment, feature, structure_points) -> Tensor:
    return module(feature, structure_points)
