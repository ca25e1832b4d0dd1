"""Self-describing container for named float64 matrices.

Layout (all integers little-endian)::

    b"ATMX"            magic
    u32                format version (1)
    u32                header length in bytes
    header             UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    payload            each array in header order, row-major '<f8'

Model files (tokenizer, alignment, generative weights) and feature files
all use this layout; only ``meta`` differs.
"""
from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"ATMX"
VERSION = 1


class MatFileError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": dict(meta or {}), "arrays": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:4] != MAGIC:
        raise MatFileError("not a matrix container (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise MatFileError(f"unsupported container version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise MatFileError(f"truncated payload for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise MatFileError("trailing bytes after payload")
    return arrays, header["meta"]


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays, meta))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())


def save_features(path: str | os.PathLike, rows: np.ndarray, **meta) -> None:
    save(path, {"features": np.atleast_2d(rows)}, {"kind": "features", **meta})


def load_features(path: str | os.PathLike) -> np.ndarray:
    arrays, _ = load(path)
    if "features" not in arrays:
        raise MatFileError(f"{path}: no 'features' array")
    return arrays["features"]
