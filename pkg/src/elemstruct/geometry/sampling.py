"""Samplers for the initial 2D patch and for triangle-mesh surfaces."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError
from .types import PointCloud, TriangleMesh


def grid_side(n: int) -> int:
    """Side length of an ``n``-point square lattice; ``n`` must be a perfect square."""
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"grid sampling needs a perfect-square count, got {n}")
    return side


def unit_square_grid(side: int) -> np.ndarray:
    """``side**2`` lattice points over [0,1]^2, boundary included.

    Vertex ``i * side + j`` sits at ``(i, j) / (side - 1)``; :func:`grid_mesh_2d`
    uses the same order.
    """
    if side == 1:
        return np.zeros((1, 2))
    ticks = np.linspace(0.0, 1.0, side)
    ii, jj = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([ii.ravel(), jj.ravel()], axis=1)


def sample_unit_square(n: int, mode: str = "random", seed=None) -> PointCloud:
    if n < 1:
        raise ValueError("need at least one sample")
    if mode == "grid":
        return PointCloud(unit_square_grid(grid_side(n)), ordered=True)
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(0.0, 1.0, size=(n, 2)))


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed=None) -> PointCloud:
    """Area-weighted face choice, then a uniform barycentric point per sample."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("cannot sample a mesh with zero surface area")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    tri = mesh.vertices[mesh.faces[face_ids]]
    pts = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return PointCloud(pts)


def grid_mesh_2d(resolution: int) -> TriangleMesh:
    """Flat ``r x r`` lattice over [0,1]^2 (z = 0) with ``2 (r-1)^2`` triangles."""
    r = int(resolution)
    if r < 2:
        raise ValueError(f"grid resolution must be >= 2, got {resolution}")
    uv = unit_square_grid(r)
    vertices = np.concatenate([uv, np.zeros((len(uv), 1))], axis=1)
    i, j = np.meshgrid(np.arange(r - 1), np.arange(r - 1), indexing="ij")
    v00 = (i * r + j).ravel()
    v10 = v00 + r
    v01 = v00 + 1
    v11 = v10 + 1
    faces = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return TriangleMesh(vertices, faces)


def box_mesh(center, half_extents) -> TriangleMesh:
    """Axis-aligned box as 12 triangles."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half_extents, dtype=float)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # x = -1
            [4, 6, 7], [4, 7, 5],  # x = +1
            [0, 4, 5], [0, 5, 1],  # y = -1
            [2, 3, 7], [2, 7, 6],  # y = +1
            [0, 2, 6], [0, 6, 4],  # z = -1
            [1, 5, 7], [1, 7, 3],  # z = +1
        ]
    )
    return TriangleMesh(c + corners * h, faces)


def ellipsoid_mesh(center, radii, n_lat: int = 16, n_lon: int = 32) -> TriangleMesh:
    """UV-sphere tessellation scaled to the given radii."""
    c = np.asarray(center, dtype=float)
    rad = np.asarray(radii, dtype=float)
    theta = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
    phi = np.linspace(0.0, 2 * np.pi, n_lon, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1).reshape(-1, 3)
    verts = np.concatenate([[[0.0, 0.0, 1.0]], ring, [[0.0, 0.0, -1.0]]])
    top, bottom = 0, len(verts) - 1
    faces = []
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        faces.append([top, 1 + j, 1 + jn])
        last = 1 + (n_lat - 2) * n_lon
        faces.append([bottom, last + jn, last + j])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b = 1 + i * n_lon + j, 1 + i * n_lon + jn
            c2, d = a + n_lon, b + n_lon
            faces.append([a, c2, d])
            faces.append([a, d, b])
    return TriangleMesh(c + verts * rad, np.array(faces))


def check_dim(points: np.ndarray, dim: int, what: str = "points") -> None:
    if points.ndim != 2 or points.shape[1] != dim:
        raise DimensionError(f"{what} must be N x {dim}, got {points.shape}")
