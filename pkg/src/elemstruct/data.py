"""Shape datasets: per-shape normalisation, on-disk layout, synthetic generators.

On disk a dataset is a directory holding

* ``manifest.tsv``: one record per line, ``relative/path<TAB>category[<TAB>group]``;
  records with a group are ordered (index ``i`` means the same material point
  in every member of the group);
* the shape files themselves (OBJ, PLY or XYZ) in original coordinates;
* ``normalization.csv``: ``id, cx, cy, cz, scale`` per record;
* optionally ``template.xyz`` (the rest pose of an ordered family) and
  ``dataset.json`` with generator metadata.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ElemStructError
from .geometry.io import read_geometry, read_xyz, write_xyz
from .geometry.sampling import box_mesh, ellipsoid_mesh, sample_mesh_surface
from .geometry.types import TriangleMesh

HALF_EXTENT = 0.95
MANIFEST = "manifest.tsv"
SIDECAR = "normalization.csv"


def normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Centre on the bounding box and scale so the largest half-extent is 0.95."""
    points = np.asarray(points, dtype=float)
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = (lo + hi) / 2
    half = float(np.max(hi - lo)) / 2
    if half <= 0:
        raise DataError("shape is a single point; cannot normalise")
    # a hair under 0.95 so every coordinate lands strictly inside the box
    scale = HALF_EXTENT / half * (1 - 1e-9)
    return (points - center) * scale, center, scale


@dataclass
class ShapeRecord:
    id: str
    category: str
    points: np.ndarray  # normalised coordinates
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    ordered: bool = False
    group: str | None = None
    source: str = ""

    def denormalize(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.scale + self.center

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass
class ShapeDataset:
    records: list[ShapeRecord]
    template: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> ShapeRecord:
        return self.records[i]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    @property
    def ordered(self) -> bool:
        return bool(self.records) and all(r.ordered for r in self.records)

    def subset(self, indices) -> "ShapeDataset":
        return ShapeDataset([self.records[i] for i in indices], self.template, dict(self.meta))

    def validate(self) -> "ShapeDataset":
        groups: dict[str, int] = {}
        for r in self.records:
            if len(r.points) == 0:
                raise DataError(f"record {r.id!r} is empty")
            if r.group is not None:
                n = groups.setdefault(r.group, len(r.points))
                if n != len(r.points):
                    raise DataError(
                        f"record {r.id!r} has {len(r.points)} points; group {r.group!r} uses {n}"
                    )
        return self


def make_record(id: str, category: str, raw_points, normalize: bool = True, **kw) -> ShapeRecord:
    raw_points = np.asarray(raw_points, dtype=float)
    if normalize:
        pts, center, scale = normalize_points(raw_points)
    else:
        pts, center, scale = raw_points.copy(), np.zeros(3), 1.0
    return ShapeRecord(id, category, pts, center, scale, **kw)


# -- loading and saving -----------------------------------------------------

def _parse_manifest(path: Path) -> list[tuple[int, str, str, str | None]]:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2 or not parts[0] or not parts[1]:
            raise DataError(f"{path}:{lineno}: expected 'path<TAB>category[<TAB>group]'")
        group = parts[2] if len(parts) > 2 and parts[2] else None
        rows.append((lineno, parts[0], parts[1], group))
    if not rows:
        raise DataError(f"manifest {path} lists no shapes")
    return rows


def load_dataset(root, manifest: str = MANIFEST, points: int = 2500, seed: int = 0) -> ShapeDataset:
    """Load every record of ``root/manifest``.

    Meshes of unordered records are surface-sampled to ``points`` points
    (seeded per record); ordered records keep their vertices, in file order.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    meta = {}
    meta_path = root / "dataset.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    normalize = meta.get("normalize", True)
    records = []
    for n, (lineno, rel, category, group) in enumerate(_parse_manifest(root / manifest)):
        path = root / rel
        try:
            pts, faces = read_geometry(path)
            if group is None and faces is not None and len(faces):
                pts = sample_mesh_surface(TriangleMesh(pts, faces), points, seed=seed + n).points
            if pts.shape[1] != 3:
                raise DataError(f"expected 3 columns, found {pts.shape[1]}")
            rec = make_record(Path(rel).stem, category, pts, normalize, ordered=group is not None, group=group, source=rel)
        except (ElemStructError, ValueError) as exc:
            raise DataError(f"record at {manifest}:{lineno} ({rel}): {exc}") from exc
        records.append(rec)
    template = None
    if (root / "template.xyz").exists():
        template = read_xyz(root / "template.xyz")
        if normalize:
            template = normalize_points(template)[0]
    return ShapeDataset(records, template, meta).validate()


def save_dataset(dataset: ShapeDataset, root) -> None:
    """Write shapes (original coordinates), manifest, sidecar and metadata."""
    root = Path(root)
    (root / "shapes").mkdir(parents=True, exist_ok=True)
    lines = []
    for r in dataset.records:
        rel = r.source or f"shapes/{r.id}.xyz"
        write_xyz(root / rel, r.denormalize(r.points))
        lines.append("\t".join([rel, r.category] + ([r.group] if r.group is not None else [])))
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    with open(root / SIDECAR, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cx", "cy", "cz", "scale"])
        for r in dataset.records:
            writer.writerow([r.id] + [f"{v:.9g}" for v in r.center] + [f"{r.scale:.9g}"])
    if dataset.template is not None:
        write_xyz(root / "template.xyz", dataset.template)
    (root / "dataset.json").write_text(json.dumps(dataset.meta, indent=2, sort_keys=True) + "\n")


# -- synthetic generators ---------------------------------------------------

@dataclass
class SyntheticSpec:
    kind: str  # box-ellipsoid-mix | articulated-chain | affine-family
    count: int
    points: int = 2500
    seed: int = 0
    max_angle: float = 0.6  # articulated-chain joint range (radians)
    zero_pose: bool = False  # articulated-chain: every shape in the rest pose
    segments: int = 4

    def validate(self) -> "SyntheticSpec":
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; choose from {sorted(GENERATORS)}")
        if self.count < 1 or self.points < 1:
            raise ValueError("count and points must be positive")
        if self.segments < 1:
            raise ValueError("segments must be positive")
        return self


def _inside(prim, pts: np.ndarray) -> np.ndarray:
    kind, c, h = prim
    rel = (pts - c) / h
    if kind == "box":
        return np.all(np.abs(rel) < 1, axis=1)
    return np.sum(rel * rel, axis=1) < 1


def _union_surface(prims, n: int, rng: np.random.Generator) -> np.ndarray:
    meshes = [box_mesh(c, h) if kind == "box" else ellipsoid_mesh(c, h) for kind, c, h in prims]
    areas = np.array([m.area for m in meshes])
    kept = []
    total = 0
    while total < n:
        # oversample, then drop points hidden inside another primitive
        counts = rng.multinomial(2 * n, areas / areas.sum())
        for j, (m, c) in enumerate(zip(meshes, counts)):
            if c == 0:
                continue
            pts = sample_mesh_surface(m, int(c), seed=rng).points
            hidden = np.zeros(len(pts), dtype=bool)
            for k, other in enumerate(prims):
                if k != j:
                    hidden |= _inside(other, pts)
            kept.append(pts[~hidden])
            total += int((~hidden).sum())
    pts = np.concatenate(kept)
    return pts[rng.permutation(len(pts))[:n]]


def _box_ellipsoid_mix(spec: SyntheticSpec) -> ShapeDataset:
    rng = np.random.default_rng(spec.seed)
    records = []
    for i in range(spec.count):
        n_prims = int(rng.integers(1, 4))
        prims = []
        for _ in range(n_prims):
            kind = "box" if rng.random() < 0.5 else "ellipsoid"
            prims.append((kind, rng.uniform(-0.35, 0.35, 3), rng.uniform(0.1, 0.5, 3)))
        pts = _union_surface(prims, spec.points, rng)
        records.append(make_record(f"shape_{i:04d}", f"p{n_prims}", pts))
    return ShapeDataset(records, None, {"kind": spec.kind, "spec": asdict(spec)})


# articulated chain ----------------------------------------------------------

SEGMENT_LENGTH = 0.5
BASE_RADIUS = 0.12


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def chain_material(n: int, segments: int, seed: int) -> np.ndarray:
    """Material coordinates ``(segment, t, theta)`` of the ``n`` chain points.

    Point ``i`` has the same material coordinate in every pose, which is what
    makes the clouds index-aligned.
    """
    rng = np.random.default_rng([seed, 1])
    seg = np.sort(rng.integers(0, segments, n))
    return np.stack([seg, rng.random(n), rng.uniform(0, 2 * np.pi, n)], axis=1)


def chain_frames(angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward kinematics: start point and rotation of every segment.

    ``angles`` is ``(segments, 2)``: bend about z then about y at each joint;
    the first row rotates the root segment.
    """
    starts, rots = [], []
    pos, rot = np.zeros(3), np.eye(3)
    for az, ay in angles:
        rot = rot @ _rot_z(az) @ _rot_y(ay)
        starts.append(pos)
        rots.append(rot)
        pos = pos + rot[:, 0] * SEGMENT_LENGTH
    return np.array(starts), np.array(rots)


def chain_radius(segment, t, segments: int):
    return BASE_RADIUS * (1.0 - 0.4 * (segment + t) / segments)


def pose_chain(material: np.ndarray, angles: np.ndarray) -> np.ndarray:
    seg = material[:, 0].astype(int)
    t, theta = material[:, 1], material[:, 2]
    r = chain_radius(seg, t, len(angles))
    local = np.stack([t * SEGMENT_LENGTH, r * np.cos(theta), r * np.sin(theta)], axis=1)
    starts, rots = chain_frames(angles)
    return starts[seg] + np.einsum("nij,nj->ni", rots[seg], local)


def _articulated_chain(spec: SyntheticSpec) -> ShapeDataset:
    rng = np.random.default_rng(spec.seed)
    material = chain_material(spec.points, spec.segments, spec.seed)
    template = pose_chain(material, np.zeros((spec.segments, 2)))
    records, poses = [], {}
    for i in range(spec.count):
        if spec.zero_pose:
            angles = np.zeros((spec.segments, 2))
        else:
            angles = rng.uniform(-spec.max_angle, spec.max_angle, (spec.segments, 2))
            angles[0] = 0.0  # the root segment stays put; bends happen at joints
        rid = f"pose_{i:04d}"
        poses[rid] = angles.tolist()
        records.append(make_record(rid, "chain", pose_chain(material, angles), ordered=True, group="chain"))
    meta = {"kind": spec.kind, "spec": asdict(spec), "poses": poses}
    return ShapeDataset(records, normalize_points(template)[0], meta)


# affine family --------------------------------------------------------------

def affine_base(n: int, seed: int) -> np.ndarray:
    """An asymmetric fixed point set with half-extent 0.5 (a box fused with an ellipsoid)."""
    rng = np.random.default_rng([seed, 2])
    prims = [("box", np.array([-0.15, 0.0, 0.0]), np.array([0.3, 0.12, 0.2])),
             ("ellipsoid", np.array([0.2, 0.15, 0.05]), np.array([0.22, 0.3, 0.12]))]
    pts = _union_surface(prims, n, rng)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return (pts - (lo + hi) / 2) * (0.5 / (np.max(hi - lo) / 2))


def random_affine(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A with diagonal in [0.6, 1] and off-diagonal entries within 0.25; b within 0.1.

    No reflections: mirror images are local minima of the Chamfer loss, which
    would turn affine recovery into a guessing game. Every image of a point
    with coordinates in [-0.5, 0.5] stays inside 0.9.
    """
    A = rng.uniform(-0.25, 0.25, (3, 3))
    A[np.diag_indices(3)] = rng.uniform(0.6, 1.0, 3)
    return A, rng.uniform(-0.1, 0.1, 3)


def _affine_family(spec: SyntheticSpec) -> ShapeDataset:
    rng = np.random.default_rng(spec.seed)
    base = affine_base(spec.points, spec.seed)
    records, maps = [], {}
    for i in range(spec.count):
        A, b = random_affine(rng)
        rid = f"affine_{i:04d}"
        maps[rid] = {"A": A.tolist(), "b": b.tolist()}
        records.append(make_record(rid, "affine", base @ A.T + b, normalize=False))
    meta = {"kind": spec.kind, "spec": asdict(spec), "affine": maps, "normalize": False}
    return ShapeDataset(records, base, meta)


GENERATORS = {
    "box-ellipsoid-mix": _box_ellipsoid_mix,
    "articulated-chain": _articulated_chain,
    "affine-family": _affine_family,
}


def generate_synthetic(spec: SyntheticSpec) -> ShapeDataset:
    spec.validate()
    return GENERATORS[spec.kind](spec).validate()


# -- splitting --------------------------------------------------------------

def split(dataset: ShapeDataset, fraction: float, seed: int = 0) -> tuple[ShapeDataset, ShapeDataset]:
    """Seeded split stratified by category.

    The train total is ``round(fraction * len)``, distributed across categories
    by largest remainder while keeping at least one shape per side.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    by_cat: dict[str, list[int]] = {}
    for i, r in enumerate(dataset.records):
        by_cat.setdefault(r.category, []).append(i)
    cats = sorted(by_cat)
    for c in cats:
        if len(by_cat[c]) < 2:
            raise DataError(f"category {c!r} has {len(by_cat[c])} shape(s); stratified split needs at least 2")
    ideal = np.array([fraction * len(by_cat[c]) for c in cats])
    take = np.floor(ideal).astype(int)
    extra = int(round(fraction * len(dataset))) - int(take.sum())
    for j in np.argsort(-(ideal - take), kind="stable")[: max(extra, 0)]:
        take[j] += 1
    train_idx, test_idx = [], []
    for c, n_train in zip(cats, take):
        idx = np.array(by_cat[c])[rng.permutation(len(by_cat[c]))]
        n_train = int(np.clip(n_train, 1, len(idx) - 1))
        train_idx += sorted(idx[:n_train].tolist())
        test_idx += sorted(idx[n_train:].tolist())
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))
