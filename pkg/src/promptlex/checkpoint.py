"""Binary checkpoints: one line of JSON header, then a raw little-endian payload.

The header lists every array as ``{"name", "shape"}`` in payload order and
records the payload dtype. Arrays are stored row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError


def write_checkpoint(path, header: dict, arrays: dict, dtype: str) -> None:
    dt = np.dtype(dtype).newbyteorder("<")
    meta = dict(header)
    meta["dtype"] = np.dtype(dtype).name
    meta["tensors"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    line = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(line)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype=dt).tobytes(order="C"))


def read_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing checkpoint header")
    try:
        meta = json.loads(raw[:nl].decode("utf-8"))
        dt = np.dtype(meta["dtype"]).newbyteorder("<")
        specs = meta["tensors"]
    except (ValueError, KeyError) as exc:
        raise ParseError(f"{path}: bad checkpoint header ({exc})") from None
    arrays = {}
    offset = nl + 1
    for spec in specs:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise ParseError(f"{path}: truncated payload at tensor {spec['name']!r}")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(shape)
        arrays[spec["name"]] = arr.astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise ParseError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return meta, arrays
