"""Chamfer distance, the index-aligned squared loss, and correspondence error.

Each loss accepts plain arrays / PointClouds (returning a float) or
:class:`~elemstruct.tensor.Tensor` inputs (returning a differentiable scalar
Tensor). Batched inputs of shape ``(B, N, d)`` give the mean over the batch.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyInputError
from ..tensor import Tensor, sorted_mean
from .kdtree import KDTree, brute_force_nearest
from .types import as_points

# Above this many pairwise distances the tree beats the vectorised dense scan
# (measured: roughly 7000 x 7000 points on one core).
TREE_CROSSOVER_PAIRS = 50_000_000


def _coords(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else as_points(x)


def dense_nearest_pairs(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Nearest neighbours in both directions from one pass over the distance matrix.

    Distances are accumulated coordinate by coordinate in the inputs' common
    dtype. Returns ``(a_to_b, b_to_a)`` index arrays; ties go to the lowest index.
    """
    dtype = np.result_type(a.dtype, b.dtype, np.float32)
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    a_to_b = np.empty(len(a), dtype=np.int64)
    best_b = np.full(len(b), np.inf, dtype=dtype)
    b_to_a = np.zeros(len(b), dtype=np.int64)
    cols = np.arange(len(b))
    for s in range(0, len(a), chunk):
        block = a[s : s + chunk]
        d = np.zeros((len(block), len(b)), dtype=dtype)
        tmp = np.empty_like(d)
        for k in range(a.shape[1]):
            np.subtract.outer(block[:, k], b[:, k], out=tmp)
            tmp *= tmp
            d += tmp
        a_to_b[s : s + len(block)] = np.argmin(d, axis=1)
        col = np.argmin(d, axis=0)
        col_d = d[col, cols]
        better = col_d < best_b
        best_b[better] = col_d[better]
        b_to_a[better] = col[better] + s
    return a_to_b, b_to_a


def nearest_pairs(a, b, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """``(a_to_b, b_to_a)`` nearest indices for two single clouds."""
    a = np.asarray(a)
    b = np.asarray(b)
    if method == "auto":
        method = "tree" if len(a) * len(b) > TREE_CROSSOVER_PAIRS else "brute"
    if method == "brute":
        return dense_nearest_pairs(a, b)
    if method == "tree":
        return KDTree(b).query(a)[0], KDTree(a).query(b)[0]
    if method == "scan":
        return brute_force_nearest(b, a)[0], brute_force_nearest(a, b)[0]
    raise ValueError(f"unknown nearest-neighbour method {method!r}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise DimensionError(f"expected matching (N, d) or (B, N, d) arrays, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimensionality mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise EmptyInputError("Chamfer distance of an empty cloud")


def _smean(x: np.ndarray) -> float:
    # sorting makes the sum independent of point order
    return np.sort(x, axis=-1).mean()


def chamfer_symmetric(a, b, method: str = "auto"):
    """Mean nearest squared distance a->b plus b->a.

    Matches are found on the current values and then held fixed, so the
    gradient flows through the squared distances of the matched pairs.
    """
    ca, cb = _coords(a), _coords(b)
    _check_pair(ca, cb)
    if ca.ndim == 2:
        ab, ba = nearest_pairs(ca, cb, method)
        if not isinstance(a, Tensor) and not isinstance(b, Tensor):
            fa = np.asarray(ca, dtype=np.float64)
            fb = np.asarray(cb, dtype=np.float64)
            return float(_smean(((fa - fb[ab]) ** 2).sum(1)) + _smean(((fb - fa[ba]) ** 2).sum(1)))
        ta = a if isinstance(a, Tensor) else Tensor(ca)
        tb = b if isinstance(b, Tensor) else Tensor(cb)
        d_ab = sorted_mean(((ta - tb[ab]) ** 2.0).sum(axis=1))
        d_ba = sorted_mean(((tb - ta[ba]) ** 2.0).sum(axis=1))
        return d_ab + d_ba

    batch = ca.shape[0]
    pairs = [nearest_pairs(ca[i], cb[i], method) for i in range(batch)]
    ab = np.stack([p[0] for p in pairs])
    ba = np.stack([p[1] for p in pairs])
    rows_a = np.arange(batch)[:, None]
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        fa = np.asarray(ca, dtype=np.float64)
        fb = np.asarray(cb, dtype=np.float64)
        return float(_smean(((fa - fb[rows_a, ab]) ** 2).sum(2)) + _smean(((fb - fa[rows_a, ba]) ** 2).sum(2)))
    ta = a if isinstance(a, Tensor) else Tensor(ca)
    tb = b if isinstance(b, Tensor) else Tensor(cb)
    d_ab = sorted_mean(((ta - tb[rows_a, ab]) ** 2.0).sum(axis=2))
    d_ba = sorted_mean(((tb - ta[rows_a, ba]) ** 2.0).sum(axis=2))
    return d_ab + d_ba


def supervised_l2(output, target):
    """Mean over index-aligned points of the squared distance (batch-averaged)."""
    co, ct = _coords(output), _coords(target)
    if co.shape != ct.shape:
        raise DimensionError(f"supervised loss needs equal shapes, got {co.shape} and {ct.shape}")
    if co.shape[-2] == 0:
        raise EmptyInputError("supervised loss of an empty cloud")
    if not isinstance(output, Tensor) and not isinstance(target, Tensor):
        diff = np.asarray(co, dtype=np.float64) - np.asarray(ct, dtype=np.float64)
        return float((diff**2).sum(-1).mean())
    to = output if isinstance(output, Tensor) else Tensor(co)
    tt = target if isinstance(target, Tensor) else Tensor(ct)
    return ((to - tt) ** 2.0).sum(axis=-1).mean()


def correspondence_error(predicted, ground_truth) -> float:
    """Mean Euclidean (not squared) distance between index-matched points."""
    p = np.asarray(_coords(predicted), dtype=np.float64)
    g = np.asarray(_coords(ground_truth), dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(f"correspondence error needs equal shapes, got {p.shape} and {g.shape}")
    if p.shape[-2] == 0:
        raise EmptyInputError("correspondence error of an empty cloud")
    return float(np.linalg.norm(p - g, axis=-1).mean())
