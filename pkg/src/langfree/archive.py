"""Named-array archive with byte-deterministic serialization.

Checkpoints must satisfy save -> load -> save == identical bytes, which rules
out container formats that embed timestamps. Layout: magic ``LFTA``, u32
version, u64 header length, JSON header (sorted keys), raw array payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LFTA"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "|u1"}


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a JSON meta blob. Deterministic for equal inputs."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to (1,)
            arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise FormatError(f"unsupported dtype {arr.dtype.name} for entry {name!r}")
        blob = arr.astype(_DTYPES[arr.dtype.name], copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"meta": meta or {}, "entries": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)) + header)
        for blob in blobs:
            fh.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive written by save_archive. Exact inverse, bit for bit."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an archive")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    if len(raw) < 16 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    payload = raw[16 + header_len :]
    arrays = {}
    for entry in header["entries"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise FormatError(f"{path}: truncated payload for entry {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(payload[start : start + n], dtype=_DTYPES[entry["dtype"]])
            .reshape(entry["shape"])
            .copy()
        )
    return arrays, header["meta"]
