"""Binary checkpoint format.

Layout::

    b"SMI1"
    uint32 little-endian  length of the metadata document in bytes
    UTF-8 JSON metadata   {"format": 1, "architecture": {...}, "tensors": [...], "extra": {...}}
    raw little-endian float64 data, tensors concatenated in manifest order

Each manifest entry carries ``name``, ``shape`` and ``offset`` (bytes, relative
to the start of the data block).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Architecture, SpeakerModel

MAGIC = b"SMI1"


class CheckpointError(ValueError):
    pass


def dumps(model: SpeakerModel, extra: dict | None = None) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name in model.names():
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    meta = {
        "format": 1,
        "architecture": model.describe(),
        "tensors": manifest,
        "extra": extra or {},
    }
    doc = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(doc)) + doc + b"".join(blobs)


def loads(buf: bytes) -> tuple[SpeakerModel, dict]:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r} at byte 0")
    if len(buf) < 8:
        raise CheckpointError("truncated header at byte 4")
    (n,) = struct.unpack_from("<I", buf, 4)
    try:
        meta = json.loads(buf[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata at byte 8: {exc}") from exc
    arch = Architecture(**meta["architecture"])
    data = memoryview(buf)[8 + n:]
    params = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start, stop = entry["offset"], entry["offset"] + 8 * count
        if stop > len(data):
            raise CheckpointError(f"tensor {entry['name']} runs past end of file (byte {8 + n + stop})")
        params[entry["name"]] = np.frombuffer(data[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
    return SpeakerModel(arch, params), meta.get("extra", {})


def save(path, model: SpeakerModel, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model, extra))
    return path


def load(path) -> SpeakerModel:
    return loads(Path(path).read_bytes())[0]


def load_with_extra(path):
    return loads(Path(path).read_bytes())
