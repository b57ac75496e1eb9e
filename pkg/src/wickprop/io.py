"""Artifact writers: raw float64 arrays with JSON sidecars, CSV tables, hashes.

Binary arrays are little-endian float64, C order, no header.  The sidecar
``<name>.json`` records shape, dtype and whatever provenance the caller
passes (seed, grid, ...).  Every CSV starts with a header row.  Floats are
written with ``repr`` so output bytes depend only on the values.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ShapeError

DTYPE = "<f8"


def write_array(path, values, **meta) -> list[Path]:
    """Write ``values`` to ``path`` plus ``path.json``; returns both paths."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    path.write_bytes(arr.tobytes(order="C"))
    sidecar = path.with_name(path.name + ".json")
    info = {"shape": list(arr.shape), "dtype": "float64", "byte_order": "little"}
    info.update(meta)
    sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return [path, sidecar]


def read_array(path) -> np.ndarray:
    path = Path(path)
    info = json.loads(path.with_name(path.name + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype=DTYPE)
    shape = tuple(info["shape"])
    if arr.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: {arr.size} values, sidecar says shape {shape}")
    return arr.reshape(shape).copy()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
