"""Versioned single-file container: magic, version, JSON header, raw arrays.

Layout (little-endian)::

    magic[8] | u32 version | u64 header_len | header (UTF-8 JSON) | array blobs

The header lists every array as ``[dtype, shape, offset, nbytes]`` with
offsets relative to the first byte after the header. Output is a pure
function of the content, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_PREFIX = struct.Struct("<IQ")


def write_container(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    assert len(magic) == 8
    table = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        table[name] = [dt.str, list(arr.shape), offset, len(raw)]
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True, ensure_ascii=False,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(version, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != magic:
        raise ValueError(f"{path}: bad magic {buf[:8]!r}, expected {magic!r}")
    got, hlen = _PREFIX.unpack_from(buf, 8)
    if got != version:
        raise ValueError(f"{path}: unsupported version {got} (expected {version})")
    start = 8 + _PREFIX.size
    header = json.loads(buf[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for name, (dtype, shape, off, nbytes) in header["arrays"].items():
        arr = np.frombuffer(buf, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize,
                            offset=base + off)
        arrays[name] = arr.reshape(shape).copy()
    return header["meta"], arrays
