"""Self-describing binary container for model parameters.

Layout: 8-byte magic, u32 little-endian header length, UTF-8 JSON header
(format version, free-form config, ordered blob descriptors), then raw
little-endian float64 blobs in descriptor order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"RFORGE1\x00"
FORMAT_VERSION = 1


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    descriptors = []
    blobs = []
    for name in sorted(arrays):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(arrays[name], dtype=np.float64)
        descriptors.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "params": descriptors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4:
        raise FormatError(f"{path}: file too short for header")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic (field: magic)")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if start + header_len > len(raw):
        raise FormatError(f"{path}: truncated header (field: header)")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header (field: header)") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format_version {header.get('format_version')!r}"
        )
    if "config" not in header or "params" not in header:
        raise FormatError(f"{path}: header missing config or params field")
    arrays: dict[str, np.ndarray] = {}
    offset = start + header_len
    for desc in header["params"]:
        name, shape = desc["name"], tuple(desc["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if offset + n_bytes > len(raw):
            raise FormatError(f"{path}: truncated blob (field: {name})")
        arrays[name] = np.frombuffer(
            raw, dtype="<f8", count=n_bytes // 8, offset=offset
        ).reshape(shape).copy()
        offset += n_bytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after blobs")
    return header["config"], arrays
