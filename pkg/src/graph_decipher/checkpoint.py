"""Parameter checkpoints: a JSON index followed by raw little-endian float64 buffers.

Layout::

    b"GDCKPT01"                 8-byte magic
    uint64 (LE)                 length of the JSON index in bytes
    JSON index                  {"tensors": [{name, shape, offset, count}], "meta": {...},
                                 "sha256": <hex digest of the data section>}
    zero padding                to an 8-byte boundary
    data                        row-major float64 values, tensors back to back
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"GDCKPT01"


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in params.items():
        a = np.ascontiguousarray(getattr(arr, "data", arr), dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    data = b"".join(chunks)
    index = {"tensors": entries, "meta": meta or {}, "sha256": hashlib.sha256(data).hexdigest()}
    header = json.dumps(index, sort_keys=True).encode()
    pad = (-(len(MAGIC) + 8 + len(header))) % 8
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(b"\0" * pad)
        fh.write(data)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        index = json.loads(raw[16:16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt index") from exc
    start = 16 + hlen
    start += (-start) % 8
    data = raw[start:]
    if hashlib.sha256(data).hexdigest() != index.get("sha256"):
        raise CheckpointError(f"{path}: data checksum mismatch")
    values = np.frombuffer(data, dtype="<f8")
    params = {}
    for e in index["tensors"]:
        lo, n = e["offset"], e["count"]
        if lo + n > values.size:
            raise CheckpointError(f"{path}: tensor {e['name']} runs past end of file")
        params[e["name"]] = values[lo:lo + n].astype(np.float64).reshape(e["shape"])
    return params, index.get("meta", {})
