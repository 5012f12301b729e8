"""Deterministic CSV reports, JSON sidecars and raw tensor dumps."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def git_blob_hash(data: bytes) -> str:
    """Content hash in the same form git uses for blobs."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def checkpoint_hash(path: str | Path) -> str:
    """Hash of a checkpoint's parameter file (the ``.bin`` next to the header)."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    return git_blob_hash((path.parent / header["params_file"]).read_bytes())


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_sidecar(path: str | Path, meta: dict) -> Path:
    side = Path(path).with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    """Write a CSV with a header row and a ``.json`` sidecar holding ``meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    write_sidecar(path, meta)
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def dump_tensor(path: str | Path, array, meta: dict) -> Path:
    """Raw little-endian float64 ``.bin`` plus a sidecar with ``shape`` and ``count``."""
    path = Path(path).with_suffix(".bin")
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array, dtype="<f8")
    path.write_bytes(arr.tobytes())
    write_sidecar(path, {**meta, "shape": list(arr.shape), "count": int(arr.shape[0]) if arr.ndim else 1})
    return path


def load_tensor(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = path.with_suffix(".json")
    if not side.exists():
        raise FileNotFoundError(f"missing tensor sidecar {side}")
    meta = json.loads(side.read_text())
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    return data.reshape(meta["shape"]).copy(), meta
