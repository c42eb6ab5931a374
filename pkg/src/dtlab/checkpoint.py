"""Binary checkpoint format.

Layout, all little-endian:

    bytes 0..3   magic b"DTLB"
    bytes 4..7   format version (u32)
    bytes 8..15  header length in bytes (u64)
    header       UTF-8 JSON: arbitrary run metadata plus a "tensors"
                 directory of {name, shape, offset} entries, offsets
                 relative to the start of the payload
    payload      concatenated raw IEEE-754 single-precision values

The header carries config dicts, the training step, and RNG state as
plain JSON so the file is readable without this library. Tensor bytes
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"DTLB"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Corrupt file, bad magic, or unsupported format version."""


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, tensors: dict, header: dict | None = None) -> Path:
    """Write named tensors plus JSON metadata; returns the path written."""
    path = Path(path)
    directory = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        # asarray keeps 0-d shapes, which ascontiguousarray would promote to (1,)
        arr = np.asarray(arr, dtype="<f4", order="C")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    full_header = dict(header or {})
    full_header["tensors"] = directory
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", FORMAT_VERSION))
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            for blob in blobs:
                f.write(blob)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, expected {FORMAT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if header_end > len(raw):
        raise CheckpointError(f"{path} truncated inside header")
    header = json.loads(raw[16:header_end].decode("utf-8"))
    payload = raw[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for entry in header.pop("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path} truncated inside tensor {entry['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float32, copy=True)
    return Checkpoint(header=header, tensors=tensors)
