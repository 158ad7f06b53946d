"""Binary container: magic ``LXL1``, length-prefixed JSON header, float32 blobs.

The header is UTF-8 JSON prefixed by a little-endian uint32 byte length.  It
carries arbitrary metadata plus an ``entries`` list of ``{"name", "shape"}``
descriptors; the raw little-endian float32 blobs follow in header order.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"LXL1"


class CheckpointError(ValueError):
    pass


def save_container(path, meta, arrays):
    """Write named float32 arrays with a metadata dict to ``path``.

    ``arrays`` is an ordered mapping name -> ndarray; order is preserved in
    the header and defines blob order.
    """
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = dict(meta)
    header["entries"] = entries
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_container(path):
    """Read a container; returns (meta dict without entries, name->float32 array)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        entries = header.pop("entries")
        arrays = {}
        for entry in entries:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated blob for '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return header, arrays
