from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, EmptyInputError


@dataclass
class PointCloud:
    """``N x d`` points. ``ordered`` marks clouds whose row index carries meaning."""

    points: np.ndarray
    ordered: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DimensionError(f"point cloud must be N x d, got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyInputError("point cloud has no points")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DimensionError(f"mesh vertices must be V x 3, got {self.vertices.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("mesh face references a vertex index out of range")

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())


def as_points(cloud) -> np.ndarray:
    """Coordinates of a PointCloud, or the array itself."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud)
