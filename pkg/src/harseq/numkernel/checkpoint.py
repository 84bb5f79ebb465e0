"""Versioned binary container for named float64 tensors plus metadata.

Layout:
    8-byte magic  b"NKTENS01"
    8-byte little-endian uint64: header length in bytes
    header: UTF-8 JSON {"version": 1, "metadata": {...},
                        "tensors": [{"name": ..., "shape": [...]}, ...]}
    raw data: for each tensor in header order, row-major little-endian
    float64 bytes.

Tensor names are written in sorted order so identical contents always
produce identical bytes; round-trips are bit-exact.
"""

import json
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"NKTENS01"
FORMAT_VERSION = 1


def save_container(path, tensors: dict, metadata: dict | None = None) -> None:
    names = sorted(tensors)
    arrays = {}
    index = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f8"))
        arrays[name] = arr
        index.append({"name": name, "shape": list(arr.shape)})
    header = {
        "version": FORMAT_VERSION,
        "metadata": metadata if metadata is not None else {},
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(arrays[name].tobytes())


def load_container(path):
    """Returns (tensors: dict[str, np.ndarray], metadata: dict)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a tensor container (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported container version {header.get('version')}")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise FormatError(f"{path}: truncated data for tensor '{entry['name']}'")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return tensors, header["metadata"]
