"""Learnable elementary structures.

An initial structure supplies sample points ``s_i``; a structure module maps
them to structure points ``e_i`` that are shared by every shape:

* :class:`PointTranslationModule` adds a learned offset per sample (fixed
  sample set, no resampling);
* :class:`PatchDeformationModule` is a continuous MLP map, so it can be
  queried at any points, including freshly resampled ones and mesh grids;
* :class:`IdentityStructure` passes samples through unchanged (the fixed
  unit-square baseline).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, UnsupportedOperationError
from .geometry.io import write_ply, write_xyz
from .geometry.sampling import grid_mesh_2d, sample_mesh_surface, sample_unit_square, unit_square_grid
from .geometry.types import PointCloud, TriangleMesh
from .tensor import MLP, Module, Parameter, Tensor


@dataclass
class InitialStructure:
    """Starting geometry ``S_k``.

    kind is ``unit-square-2d``, ``template-mesh`` (resampled from ``mesh``), or
    ``fixed-point-set`` (``points`` used as-is; cannot be resampled).
    """

    kind: str
    n_points: int
    mesh: TriangleMesh | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("unit-square-2d", "template-mesh", "fixed-point-set"):
            raise ValueError(f"unknown initial structure kind {self.kind!r}")
        if self.kind == "template-mesh" and self.mesh is None:
            raise ValueError("template-mesh needs a mesh")
        if self.kind == "fixed-point-set":
            if self.points is None:
                raise ValueError("fixed-point-set needs points")
            self.points = np.asarray(self.points, dtype=float)
            self.n_points = len(self.points)

    @property
    def dim_in(self) -> int:
        if self.kind == "unit-square-2d":
            return 2
        if self.kind == "template-mesh":
            return 3
        return self.points.shape[1]

    @property
    def resamplable(self) -> bool:
        return self.kind != "fixed-point-set"


def embed(points: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad to ``dim`` columns, or keep the first ``dim`` (a projection)."""
    d = points.shape[1]
    if d == dim:
        return points
    if d > dim:
        return points[:, :dim].copy()
    return np.concatenate([points, np.zeros((len(points), dim - d))], axis=1)


def resample_initial(structure: InitialStructure, n: int, seed=None, embed_dim: int | None = None) -> PointCloud:
    """Fresh samples of a resamplable initial structure."""
    if structure.kind == "unit-square-2d":
        pts = sample_unit_square(n, mode="random", seed=seed).points
    elif structure.kind == "template-mesh":
        pts = sample_mesh_surface(structure.mesh, n, seed=seed).points
    else:
        raise UnsupportedOperationError("a fixed point set cannot be resampled")
    if embed_dim is not None:
        pts = embed(pts, embed_dim)
    return PointCloud(pts)


def fixed_samples(structure: InitialStructure, seed=None) -> np.ndarray:
    """The deterministic sample set used at evaluation time and by translation modules.

    Template meshes use their vertices when the vertex count equals ``n_points``
    (vertex order then carries correspondence meaning).
    """
    if structure.kind == "fixed-point-set":
        return structure.points
    if structure.kind == "template-mesh" and len(structure.mesh.vertices) == structure.n_points:
        return structure.mesh.vertices
    if structure.kind == "unit-square-2d":
        side = int(np.sqrt(structure.n_points))
        if side * side == structure.n_points:
            return unit_square_grid(side)
    return resample_initial(structure, structure.n_points, seed=seed).points


class PointTranslationModule(Module):
    kind = "translation"

    def __init__(self, base: np.ndarray, dim_out: int):
        base = embed(np.asarray(base, dtype=float), dim_out)
        self.dim_in = base.shape[1]
        self.dim_out = dim_out
        self.base = Tensor(base)
        self.offsets = Parameter(np.zeros_like(base))

    @property
    def n_points(self) -> int:
        return self.offsets.shape[0]

    def forward(self, samples=None) -> Tensor:
        if samples is not None:
            n = len(samples)
            if n != self.n_points:
                raise DimensionError(f"translation module holds {self.n_points} points, queried with {n}")
        return self.base + self.offsets


class PatchDeformationModule(Module):
    kind = "deformation"

    def __init__(self, dim_in: int, dim_out: int, rng: np.random.Generator, widths: Sequence[int] = (128, 128)):
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.mlp = MLP((dim_in,) + tuple(widths) + (dim_out,), rng, batchnorm=False, final="none")

    def forward(self, samples) -> Tensor:
        s = samples if isinstance(samples, Tensor) else Tensor(np.asarray(samples))
        if s.shape[-1] != self.dim_in:
            raise DimensionError(f"deformation module expects {self.dim_in}-d samples, got {s.shape}")
        return self.mlp(s)


class IdentityStructure(Module):
    """Frozen structure: samples embedded into ``dim_out`` and returned as-is."""

    kind = "identity"

    def __init__(self, dim_in: int, dim_out: int):
        self.dim_in = dim_in
        self.dim_out = dim_out

    def forward(self, samples) -> Tensor:
        arr = samples.data if isinstance(samples, Tensor) else np.asarray(samples)
        return Tensor(embed(arr, self.dim_out))


def structure_forward(module: Module, samples) -> PointCloud:
    """Structure points for ``samples`` as an ordered PointCloud."""
    return PointCloud(module(samples).data, ordered=True)


def export_structure(module: Module, samples=None, grid_resolution: int | None = None):
    """Structure points (any module) or, with ``grid_resolution``, a warped grid mesh.

    Mesh export needs a continuous map from 2D samples, so it is refused for
    translation modules. Meshes of structures with ``dim_out != 3`` use the
    first three coordinates (zero-padded if fewer).
    """
    if grid_resolution is None:
        if module.kind == "translation":
            return structure_forward(module, None)
        if samples is None:
            raise ValueError("samples are required to export a continuous structure")
        return structure_forward(module, samples)
    if module.kind == "translation":
        raise UnsupportedOperationError("translation modules yield a finite point set, not a surface")
    if module.dim_in != 2:
        raise UnsupportedOperationError("mesh export needs a 2D initial structure")
    grid = grid_mesh_2d(grid_resolution)
    pts = module(grid.vertices[:, :2]).data
    return TriangleMesh(embed(np.asarray(pts, dtype=float), 3), grid.faces)


def write_structure_files(path_stem, points: np.ndarray, meta: dict) -> list[Path]:
    """PLY of the first three coordinates, full-dimension XYZ, and a JSON sidecar."""
    stem = Path(path_stem)
    points = np.asarray(points)
    ply, xyz, js = stem.with_suffix(".ply"), stem.with_suffix(".xyz"), stem.with_suffix(".json")
    write_ply(ply, embed(points, 3) if points.shape[1] < 3 else points[:, :3])
    write_xyz(xyz, points)
    info = dict(meta)
    info.setdefault("N", int(len(points)))
    info.setdefault("d_e", int(points.shape[1]))
    info["projection"] = "first three coordinates" if points.shape[1] > 3 else "none"
    js.write_text(json.dumps(info, indent=2, sort_keys=True))
    return [ply, xyz, js]
