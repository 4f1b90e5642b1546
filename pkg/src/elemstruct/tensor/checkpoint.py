"""Binary checkpoint container.

Layout::

    b"ESCKPT\\x00\\x01"                      8-byte magic
    uint32 little-endian                   format version
    uint64 little-endian                   header length H
    H bytes UTF-8 JSON header
    raw payload                            little-endian arrays, back to back

The header lists every entry as ``{"name", "shape", "dtype", "offset",
"nbytes"}`` with offsets relative to the payload start, and carries the Adam
scalars plus arbitrary JSON metadata (model and training config).
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError
from .nn import Module
from .optim import Adam

MAGIC = b"ESCKPT\x00\x01"
FORMAT_VERSION = 1


def _entries(model: Module, optimizer: Adam | None) -> list[tuple[str, np.ndarray]]:
    items = [("param:" + n, p.data) for n, p in model.named_parameters()]
    items += [("buffer:" + n, b) for n, b in model.named_buffers()]
    if optimizer is not None:
        items += [("adam.m:" + n, a) for n, a in optimizer.state.first_moment.items()]
        items += [("adam.v:" + n, a) for n, a in optimizer.state.second_moment.items()]
    return items


def save_checkpoint(path, model: Module, optimizer: Adam | None = None, metadata: dict | None = None) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    entries, payload, offset = [], io.BytesIO(), 0
    for name, arr in _entries(model, optimizer):
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw)}
        )
        payload.write(raw)
        offset += len(raw)
    header: dict[str, Any] = {"version": FORMAT_VERSION, "entries": entries, "metadata": metadata or {}}
    if optimizer is not None:
        st = optimizer.state
        header["adam"] = {
            "step_count": st.step_count,
            "learning_rate": st.learning_rate,
            "beta1": st.beta1,
            "beta2": st.beta2,
            "epsilon": st.epsilon,
        }
    head = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
            fh.write(head)
            fh.write(payload.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, arrays)`` from a checkpoint file."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    version, head_len = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[20 : 20 + head_len].decode("utf-8"))
    base = 20 + head_len
    arrays = {}
    for e in header["entries"]:
        start = base + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, arrays


def load_into(model: Module, arrays: dict[str, np.ndarray], optimizer: Adam | None = None, header=None) -> None:
    """Copy checkpoint arrays into an already-constructed model (and optimizer)."""
    for name, p in model.named_parameters():
        key = "param:" + name
        if key not in arrays:
            raise DataError(f"checkpoint is missing parameter {name!r}")
        if arrays[key].shape != p.shape:
            raise DataError(f"parameter {name!r}: checkpoint shape {arrays[key].shape} != model shape {p.shape}")
        p.data = arrays[key].astype(p.data.dtype)
    for name, buf in model.named_buffers():
        key = "buffer:" + name
        if key in arrays:
            buf[...] = arrays[key]
    if optimizer is not None:
        for name in optimizer.params:
            if "adam.m:" + name in arrays:
                optimizer.state.first_moment[name][...] = arrays["adam.m:" + name]
                optimizer.state.second_moment[name][...] = arrays["adam.v:" + name]
        if header and "adam" in header:
            adam = header["adam"]
            optimizer.state.step_count = adam["step_count"]
            optimizer.state.learning_rate = adam["learning_rate"]
