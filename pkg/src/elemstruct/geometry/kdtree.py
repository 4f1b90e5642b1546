"""Exact nearest-neighbour search: a k-d tree and a chunked brute-force scan.

Both return identical answers, including on ties, which always resolve to
the lowest point index.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyInputError

LEAF_SIZE = 16


class KDTree:
    """Balanced k-d tree, median split on the widest axis, immutable once built."""

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise DimensionError(f"KDTree needs an N x d array, got {pts.shape}")
        if len(pts) == 0:
            raise EmptyInputError("cannot build a KDTree over zero points")
        self.points = pts
        self.leaf_size = max(1, int(leaf_size))
        self.order = np.arange(len(pts))
        # node arrays; leaves have axis == -1 and own order[start:stop]
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._stop: list[int] = []
        self._build(0, len(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _new_node(self, axis, split, start, stop) -> int:
        self._axis.append(axis)
        self._split.append(split)
        self._left.append(-1)
        self._right.append(-1)
        self._start.append(start)
        self._stop.append(stop)
        return len(self._axis) - 1

    def _build(self, start: int, stop: int) -> int:
        if stop - start <= self.leaf_size:
            return self._new_node(-1, 0.0, start, stop)
        idx = self.order[start:stop]
        sub = self.points[idx]
        extent = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(extent))
        if extent[axis] == 0.0:
            # all points coincide; nothing to split on
            return self._new_node(-1, 0.0, start, stop)
        mid = (stop - start) // 2
        part = np.argpartition(sub[:, axis], mid, kind="introselect")
        self.order[start:stop] = idx[part]
        split = float(self.points[self.order[start + mid], axis])
        node = self._new_node(axis, split, start, stop)
        self._left[node] = self._build(start, start + mid)
        self._right[node] = self._build(start + mid, stop)
        return node

    def nearest(self, query) -> tuple[int, float]:
        """Index of the closest point and its squared distance."""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionError(f"query has shape {q.shape}, tree holds {self.dim}-d points")
        best_i, best_d = -1, np.inf
        stack = [(0, 0.0)]
        axis_, split_, left_, right_ = self._axis, self._split, self._left, self._right
        while stack:
            node, bound = stack.pop()
            if bound > best_d:
                continue
            axis = axis_[node]
            if axis < 0:
                ids = self.order[self._start[node] : self._stop[node]]
                d = ((self.points[ids] - q) ** 2).sum(axis=1)
                dmin = d.min()
                if dmin <= best_d:
                    cand = ids[d == dmin].min()
                    if dmin < best_d or cand < best_i:
                        best_i, best_d = int(cand), float(dmin)
                continue
            diff = q[axis] - split_[node]
            near, far = (left_[node], right_[node]) if diff < 0 else (right_[node], left_[node])
            # far first so that near is popped next
            stack.append((far, diff * diff))
            stack.append((near, bound))
        return best_i, best_d

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        qs = np.asarray(queries, dtype=np.float64)
        if qs.ndim != 2 or qs.shape[1] != self.dim:
            raise DimensionError(f"queries must be M x {self.dim}, got {qs.shape}")
        idx = np.empty(len(qs), dtype=np.int64)
        dist = np.empty(len(qs))
        for m, q in enumerate(qs):
            idx[m], dist[m] = self.nearest(q)
        return idx, dist


def nearest(index: KDTree, query) -> tuple[int, float]:
    return index.nearest(query)


def brute_force_nearest(points, queries, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised exhaustive scan; same distance formula and tie rule as the tree."""
    pts = np.asarray(points, dtype=np.float64)
    qs = np.asarray(queries, dtype=np.float64)
    if pts.ndim != 2 or qs.ndim != 2 or pts.shape[1] != qs.shape[1]:
        raise DimensionError(f"dimension mismatch: points {pts.shape}, queries {qs.shape}")
    if len(pts) == 0:
        raise EmptyInputError("no points to search")
    idx = np.empty(len(qs), dtype=np.int64)
    dist = np.empty(len(qs))
    for s in range(0, len(qs), chunk):
        d = ((qs[s : s + chunk, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        j = np.argmin(d, axis=1)
        idx[s : s + chunk] = j
        dist[s : s + chunk] = d[np.arange(len(j)), j]
    return idx, dist
