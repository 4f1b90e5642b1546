from .io import read_geometry, read_obj, read_ply, read_xyz, write_obj, write_ply, write_xyz
from .kdtree import KDTree, brute_force_nearest, nearest
from .losses import chamfer_symmetric, correspondence_error, nearest_pairs, supervised_l2
from .sampling import grid_mesh_2d, sample_mesh_surface, sample_unit_square
from .types import PointCloud, TriangleMesh, as_points

__all__ = [
    "KDTree",
    "PointCloud",
    "TriangleMesh",
    "as_points",
    "brute_force_nearest",
    "chamfer_symmetric",
    "correspondence_error",
    "grid_mesh_2d",
    "nearest",
    "nearest_pairs",
    "read_geometry",
    "read_obj",
    "read_ply",
    "read_xyz",
    "sample_mesh_surface",
    "sample_unit_square",
    "supervised_l2",
    "write_obj",
    "write_ply",
    "write_xyz",
]
