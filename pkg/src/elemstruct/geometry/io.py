"""Readers and writers for OBJ, ASCII PLY, and XYZ point files.

Floats are written with 9 significant digits, which round-trips float32
exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import TriangleMesh

FLOAT_FMT = "{:.9g}"


def _fmt_row(values) -> str:
    return " ".join(FLOAT_FMT.format(float(v)) for v in values)


# -- XYZ --------------------------------------------------------------------

def read_xyz(path) -> np.ndarray:
    path = Path(path)
    rows, width = [], None
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, None, f"cannot read file ({exc.strerror})") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise FormatError(path, lineno, f"non-numeric value in {line!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(path, lineno, f"expected {width} columns, found {len(row)}")
        if not all(np.isfinite(row)):
            raise FormatError(path, lineno, "non-finite coordinate")
        rows.append(row)
    if not rows:
        raise FormatError(path, None, "no points found")
    return np.array(rows, dtype=float)


def write_xyz(path, points) -> None:
    pts = np.asarray(points)
    with open(path, "w") as fh:
        for row in pts:
            fh.write(_fmt_row(row) + "\n")


# -- OBJ --------------------------------------------------------------------

def read_obj(path) -> TriangleMesh | np.ndarray:
    """Vertices and triangles; a file without faces yields just the vertex array."""
    path = Path(path)
    verts, faces = [], []
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, None, f"cannot read file ({exc.strerror})") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            try:
                verts.append([float(t) for t in parts[1:4]])
            except ValueError:
                raise FormatError(path, lineno, "bad vertex coordinates") from None
            if len(verts[-1]) != 3:
                raise FormatError(path, lineno, "vertex needs 3 coordinates")
        elif tag == "f":
            if len(parts) != 4:
                raise FormatError(path, lineno, f"only triangle faces are supported, got {len(parts) - 1} corners")
            try:
                idx = [int(t.split("/")[0]) for t in parts[1:]]
            except ValueError:
                raise FormatError(path, lineno, "bad face indices") from None
            # OBJ is 1-based; negative indices count from the end
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts:
        raise FormatError(path, None, "no vertices found")
    v = np.array(verts, dtype=float)
    if not faces:
        return v
    try:
        return TriangleMesh(v, np.array(faces))
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def write_obj(path, vertices, faces=None) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(vertices):
            fh.write("v " + _fmt_row(row) + "\n")
        if faces is not None:
            for f in np.asarray(faces):
                fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in f)))


# -- PLY (ascii) ------------------------------------------------------------

def write_ply(path, points, faces=None, colors=None) -> None:
    pts = np.asarray(points)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        for name in ("x", "y", "z"):
            fh.write(f"property float {name}\n")
        if colors is not None:
            for name in ("red", "green", "blue"):
                fh.write(f"property uchar {name}\n")
        if faces is not None:
            fh.write(f"element face {len(faces)}\n")
            fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        cols = None if colors is None else np.asarray(colors, dtype=np.uint8)
        for i, row in enumerate(pts):
            line = _fmt_row(row[:3])
            if cols is not None:
                line += " {} {} {}".format(*cols[i])
            fh.write(line + "\n")
        if faces is not None:
            for f in np.asarray(faces):
                fh.write("3 {} {} {}\n".format(*(int(i) for i in f)))


def read_ply(path) -> dict:
    """Parse an ASCII PLY into ``{"points", "faces", "colors"}`` (absent -> None)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, None, f"cannot read file ({exc.strerror})") from exc
    if not lines or lines[0].strip() != "ply":
        raise FormatError(path, 1, "missing 'ply' magic line")
    elements: list[tuple[str, int, list[str]]] = []
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise FormatError(path, lineno, f"only ascii PLY is supported, got {parts[1]}")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(path, lineno, "property before any element")
            elements[-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            body_start = lineno
            break
    if body_start is None:
        raise FormatError(path, None, "missing end_header")

    cursor = body_start  # index into lines of the next body line
    out = {"points": None, "faces": None, "colors": None}
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            if cursor >= len(lines):
                raise FormatError(path, cursor, f"file ends inside element {name!r}")
            try:
                rows.append([float(t) for t in lines[cursor].split()])
            except ValueError:
                raise FormatError(path, cursor + 1, "non-numeric value") from None
            cursor += 1
        if name == "vertex":
            try:
                cols = [props.index(c) for c in ("x", "y", "z")]
            except ValueError:
                raise FormatError(path, None, "vertex element lacks x/y/z") from None
            if any(len(r) != len(props) for r in rows):
                raise FormatError(path, None, "vertex row length does not match header")
            arr = np.array(rows, dtype=float).reshape(count, len(props))
            out["points"] = arr[:, cols]
            if all(c in props for c in ("red", "green", "blue")):
                out["colors"] = arr[:, [props.index(c) for c in ("red", "green", "blue")]].astype(np.uint8)
        elif name == "face":
            faces = []
            for r in rows:
                if int(r[0]) != 3:
                    raise FormatError(path, None, "only triangle faces are supported")
                faces.append([int(v) for v in r[1:4]])
            out["faces"] = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if out["points"] is None or len(out["points"]) == 0:
        raise FormatError(path, None, "no vertices found")
    return out


def read_geometry(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Load any supported file as ``(vertices_or_points, faces_or_None)``."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".xyz" or suffix == ".txt":
        return read_xyz(path), None
    if suffix == ".obj":
        res = read_obj(path)
        if isinstance(res, TriangleMesh):
            return res.vertices, res.faces
        return res, None
    if suffix == ".ply":
        res = read_ply(path)
        return res["points"], res["faces"]
    raise FormatError(path, None, f"unsupported file extension {suffix!r}")
