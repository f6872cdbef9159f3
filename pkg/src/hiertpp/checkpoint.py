"""Single-file tensor checkpoints.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw little-endian float64 payloads back to back.  Offsets in the
header's tensor manifest are relative to the start of the payload block.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DimensionError, ValidationError

MAGIC = b"HTPPCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], config: dict | None = None) -> None:
    manifest, payloads, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                         "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = {"format_version": FORMAT_VERSION, "config": config or {}, "tensors": manifest}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for data in payloads:
            fh.write(data)


def load_checkpoint(path, expected_shapes: Mapping[str, tuple] | None = None
                    ) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns ``(config, tensors)``.

    With ``expected_shapes`` the manifest must name exactly those tensors with
    exactly those shapes.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version {header.get('format_version')}")
    base = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if entry["nbytes"] != 8 * count:
            raise ValidationError(f"{path}: tensor {entry['name']} byte count does not match shape")
        start = base + entry["offset"]
        if start + entry["nbytes"] > len(raw):
            raise ValidationError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(shape)
    if expected_shapes is not None:
        missing = set(expected_shapes) - set(tensors)
        extra = set(tensors) - set(expected_shapes)
        if missing or extra:
            raise ValidationError(f"{path}: manifest mismatch (missing {sorted(missing)}, "
                                  f"unexpected {sorted(extra)})")
        for name, shape in expected_shapes.items():
            if tensors[name].shape != tuple(shape):
                raise DimensionError(f"{path}: tensor {name} has shape {tensors[name].shape}, "
                                     f"expected {tuple(shape)}")
    return header["config"], tensors
