"""Self-describing binary container for models and conditioners.

Layout: a magic line, one line of JSON header, then the float64
little-endian blobs named in the header, back to back. The header is
written with sorted keys so identical content gives identical bytes.
"""

import json

import numpy as np

MAGIC = b"VAEACSHAP-CONTAINER 1\n"


class FormatError(ValueError):
    """File is not a container or is truncated."""


def write_container(path, kind, header, arrays):
    """Write ``arrays`` (name -> ndarray) under a JSON ``header``."""
    index, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.size
    meta = {"kind": kind, "header": header, "arrays": index}
    line = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line + b"\n")
        for b in blobs:
            fh.write(b)


def read_container(path, expect_kind=None):
    """Return ``(kind, header, arrays)``."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise FormatError(f"{path}: not a vaeacshap container")
        meta = json.loads(fh.readline().decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if expect_kind is not None and meta["kind"] != expect_kind:
        raise FormatError(f"{path}: holds a {meta['kind']!r}, expected {expect_kind!r}")
    arrays = {}
    for entry in meta["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > payload.size:
            raise FormatError(f"{path}: truncated blob {entry['name']!r}")
        arrays[entry["name"]] = payload[start:start + size].reshape(entry["shape"]).astype(np.float64)
    return meta["kind"], meta["header"], arrays


def peek_kind(path):
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise FormatError(f"{path}: not a vaeacshap container")
        return json.loads(fh.readline().decode("utf-8"))["kind"]
