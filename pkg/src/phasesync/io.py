"""Columnar data files: '#'-headed text and a compact binary twin.

Text files carry ``# key: value`` header lines followed by a ``# columns:``
line and whitespace-separated rows written with ``%.17g`` so that values
round-trip exactly.  Binary files start with a magic line, an 8-byte
header length, a JSON header with the same keys, and then raw little-endian
float64 rows.  Neither format embeds wall-clock time, so fixed inputs give
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PHASESYNC-F8\n"
FORMATS = ("text", "binary")
SUFFIX = {"text": ".txt", "binary": ".bin"}


def _header_value(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def write_table(path, columns: dict, meta: dict | None = None, fmt="text") -> Path:
    """Write equal-length 1-D ``columns`` (name -> array) with a metadata header."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    names = list(columns)
    if not names:
        raise ValueError("no columns to write")
    data = np.column_stack([np.asarray(columns[k], dtype=float).ravel() for k in names])
    meta = dict(meta or {})
    path = Path(path)
    if path.suffix not in (".txt", ".bin"):
        path = path.with_suffix(SUFFIX[fmt])
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "text":
        lines = [f"{k}: {_header_value(v)}" for k, v in meta.items()]
        lines.append("columns: " + " ".join(names))
        np.savetxt(path, data, fmt="%.17g", header="\n".join(lines), comments="# ")
    else:
        header = dict(meta, columns=names, rows=int(data.shape[0]), dtype="<f8")
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return path


def _parse_header_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def read_table(path):
    """Read either format; returns ``(meta, columns)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head == MAGIC:
            (n,) = struct.unpack("<Q", fh.read(8))
            meta = json.loads(fh.read(n))
            names = meta.pop("columns")
            rows = meta.pop("rows")
            meta.pop("dtype", None)
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(rows, len(names))
            return meta, {k: data[:, i].copy() for i, k in enumerate(names)}
    meta = {}
    names = None
    has_data = False
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                has_data = bool(line.strip())
                break
            key, _, value = line[1:].strip().partition(": ")
            if key == "columns":
                names = value.split()
            else:
                meta[key] = _parse_header_value(value)
    if names is None:
        raise ValueError(f"{path}: no '# columns:' header line")
    if not has_data:
        return meta, {k: np.zeros(0) for k in names}
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: {data.shape[1]} data columns but {len(names)} names")
    return meta, {k: data[:, i] for i, k in enumerate(names)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
