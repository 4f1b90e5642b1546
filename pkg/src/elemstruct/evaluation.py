"""Reconstruction metrics, closest-point correspondences, and mesh export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ShapeDataset, ShapeRecord
from .errors import DataError, EmptyInputError, UnsupportedOperationError
from .geometry.losses import chamfer_symmetric, correspondence_error, nearest_pairs, supervised_l2
from .geometry.sampling import grid_mesh_2d
from .geometry.types import TriangleMesh, as_points
from .model import ReconstructionModel
from .tensor import no_grad

REPORT_SCALE = 1e3  # Chamfer values are displayed multiplied by 1000


@dataclass
class ChamferReport:
    ids: list[str]
    categories: list[str]
    values: np.ndarray  # per shape, already x1000

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def per_category(self) -> dict[str, float]:
        cats = np.array(self.categories)
        return {c: float(self.values[cats == c].mean()) for c in sorted(set(self.categories))}


def to_report_units(raw: float) -> float:
    return raw * REPORT_SCALE


def eval_chamfer(model: ReconstructionModel, dataset: ShapeDataset) -> ChamferReport:
    """Eval-mode Chamfer of every shape against its own stored cloud."""
    if len(dataset) == 0:
        raise EmptyInputError("cannot evaluate on an empty test set")
    values = []
    for rec in dataset:
        out = model.reconstruct(rec.points).points
        values.append(to_report_units(chamfer_symmetric(out, rec.points)))
    return ChamferReport(dataset.ids, [r.category for r in dataset], np.array(values))


def eval_supervised(model: ReconstructionModel, dataset: ShapeDataset) -> float:
    """Mean index-aligned squared error over ordered shapes (the supervised loss, eval mode)."""
    if len(dataset) == 0:
        raise EmptyInputError("cannot evaluate on an empty test set")
    values = []
    for rec in dataset:
        if rec.n_points != model.n_points:
            raise DataError(f"shape {rec.id!r} has {rec.n_points} points; the structure has {model.n_points}")
        values.append(supervised_l2(model.reconstruct(rec.points).points, rec.points))
    return float(np.mean(values))


def write_metrics_csv(path, report: ChamferReport, correspondence: dict[str, float] | None = None) -> None:
    """One row per shape plus a final ``mean`` row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["id", "category", "chamfer_x1e3"]
        if correspondence is not None:
            head.append("correspondence_error")
        writer.writerow(head)
        for sid, cat, v in zip(report.ids, report.categories, report.values):
            row = [sid, cat, f"{v:.6f}"]
            if correspondence is not None:
                c = correspondence.get(sid)
                row.append("" if c is None else f"{c:.6f}")
            writer.writerow(row)
        summary = ["mean", "", f"{report.mean:.6f}"]
        if correspondence is not None:
            summary.append(f"{np.mean(list(correspondence.values())):.6f}" if correspondence else "")
        writer.writerow(summary)


# -- correspondences --------------------------------------------------------

@dataclass
class CorrespondenceMap:
    structure_indices: np.ndarray  # per source vertex, index i into the structure
    target_points: np.ndarray  # per source vertex, its mapped location

    def __len__(self) -> int:
        return len(self.structure_indices)


def _nearest(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    return nearest_pairs(np.asarray(queries, dtype=float), np.asarray(points, dtype=float))[0]


def match(model: ReconstructionModel, shape_a, shape_b, snap: bool = True) -> CorrespondenceMap:
    """Map every vertex of ``shape_a`` onto ``shape_b`` through the shared structure.

    Vertex ``j`` of A picks the closest point ``i`` of A's reconstruction; its
    image is point ``i`` of B's reconstruction, optionally snapped to B's
    nearest input vertex.
    """
    if model.K != 1:
        raise UnsupportedOperationError(f"matching needs a single-structure model, this one has K={model.K}")
    a = np.asarray(as_points(shape_a), dtype=float)
    b = np.asarray(as_points(shape_b), dtype=float)
    rec_a = model.reconstruct(a).points
    rec_b = model.reconstruct(b).points
    idx = _nearest(a, rec_a)
    targets = rec_b[idx]
    if snap:
        targets = b[_nearest(targets, b)]
    return CorrespondenceMap(idx, targets)


def write_correspondences(path, cmap: CorrespondenceMap) -> None:
    """Rows of ``source_vertex_index target_x target_y target_z structure_index``."""
    with open(path, "w") as fh:
        for j, (p, i) in enumerate(zip(cmap.target_points, cmap.structure_indices)):
            fh.write(f"{j} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {int(i)}\n")


def correspondence_pairs(dataset: ShapeDataset, n_pairs: int | None = None, seed: int = 0) -> list[tuple[ShapeRecord, ShapeRecord]]:
    """Random pairs of distinct shapes sharing a correspondence group."""
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(dataset):
        if r.ordered and r.group is not None:
            groups.setdefault(r.group, []).append(i)
    candidates = [(i, j) for g in groups.values() for i in g for j in g if i < j]
    if not candidates:
        raise DataError("no ground-truth correspondences: the dataset has no ordered group with two shapes")
    rng = np.random.default_rng(seed)
    if n_pairs is not None and n_pairs < len(candidates):
        chosen = rng.choice(len(candidates), size=n_pairs, replace=False)
        candidates = [candidates[k] for k in sorted(chosen)]
    return [(dataset[i], dataset[j]) for i, j in candidates]


def _check_pair(a: ShapeRecord, b: ShapeRecord) -> None:
    if not (a.ordered and b.ordered) or a.group is None or a.group != b.group:
        raise DataError(f"no ground truth between {a.id!r} and {b.id!r}: not in one ordered group")


def eval_correspondence(model: ReconstructionModel, pairs, snap: bool = True) -> float:
    """Mean distance between predicted images and ground-truth partners over all pairs.

    Ground truth for ordered records of one group: vertex ``j`` of A corresponds
    to vertex ``j`` of B.
    """
    if not pairs:
        raise DataError("no pairs to evaluate")
    errors = []
    for a, b in pairs:
        _check_pair(a, b)
        errors.append(correspondence_error(match(model, a.points, b.points, snap).target_points, b.points))
    return float(np.mean(errors))


def random_assignment_error(pairs, seed: int = 0) -> float:
    """Chance level: each vertex of A sent to a uniformly random vertex of B."""
    rng = np.random.default_rng(seed)
    errors = []
    for a, b in pairs:
        _check_pair(a, b)
        guess = b.points[rng.integers(0, len(b.points), len(a.points))]
        errors.append(correspondence_error(guess, b.points))
    return float(np.mean(errors))


def self_match_error(model: ReconstructionModel, points, snap: bool = True) -> float:
    pts = np.asarray(as_points(points), dtype=float)
    return correspondence_error(match(model, pts, pts, snap).target_points, pts)


def reconstruction_residual(model: ReconstructionModel, points) -> float:
    """Mean distance between index-aligned reconstruction and target points."""
    pts = np.asarray(as_points(points), dtype=float)
    return correspondence_error(model.reconstruct(pts).points, pts)


# -- meshes and affine dumps ------------------------------------------------

def reconstruct_mesh(model: ReconstructionModel, target, grid_resolution: int) -> list[TriangleMesh]:
    """One output mesh per structure: a regular grid pushed through psi_k then p_k."""
    if model.config.structure_kind == "translation":
        raise UnsupportedOperationError("translation structures are a finite point set; no surface to mesh")
    if any(s.dim_in != 2 for s in model.initial):
        raise UnsupportedOperationError("mesh reconstruction needs 2D initial structures")
    grid = grid_mesh_2d(grid_resolution)
    uv = grid.vertices[:, :2]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model.forward(np.asarray(as_points(target)), samples=[uv] * model.K).data
    finally:
        model.train(was_training)
    n = len(uv)
    return [TriangleMesh(np.asarray(out[k * n : (k + 1) * n], dtype=float), grid.faces) for k in range(model.K)]


def predicted_affine(model: ReconstructionModel, target) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-structure ``(A, b)`` of a linear-adjustment model for one shape."""
    if model.config.adjustment_kind != "linear":
        raise UnsupportedOperationError("affine parameters exist only for linear adjustments")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            feature = model.encoder(np.asarray(as_points(target))).reshape(1, -1)
            out = []
            for adj in model.adjustments:
                A, b = adj.predict(feature)
                out.append((np.asarray(A.data[0], dtype=float), np.asarray(b.data[0], dtype=float)))
    finally:
        model.train(was_training)
    return out


def write_affine_csv(path, model: ReconstructionModel, dataset: ShapeDataset) -> None:
    """Rows ``id, k, A (row-major), b`` for every shape and structure."""
    rows = []
    for rec in dataset:
        for k, (A, b) in enumerate(predicted_affine(model, rec.points)):
            rows.append([rec.id, k] + [f"{v:.9g}" for v in A.ravel()] + [f"{v:.9g}" for v in b])
    d = model.config.d_e
    head = ["id", "k"] + [f"A{r}{c}" for r in range(3) for c in range(d)] + ["b0", "b1", "b2"]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(head)
        writer.writerows(rows)
