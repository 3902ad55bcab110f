"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"SVATCKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted
    offset 20+H          array data, float64 little-endian, C order, back to back

The header holds ``{"format_version", "arrays", "meta"}``. ``arrays`` is a list
of ``{"name", "shape", "offset", "nbytes"}`` with offsets relative to the start
of the data block. ``meta`` is free-form JSON (config, RNG state, counters).
Writing the same content always yields the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"SVATCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def dump(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"format_version": FORMAT_VERSION, "arrays": entries, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    data = memoryview(raw)[start + hlen:]
    arrays = {}
    for e in header["arrays"]:
        chunk = data[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise DataError(f"{path}: array {e['name']} truncated")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]
