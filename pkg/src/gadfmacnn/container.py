"""Versioned binary container shared by image sets and checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"GADFMCNN"
    uint32    format version
    uint64    length of the JSON header in bytes
    ...       JSON header (utf-8, sorted keys)
    ...       payload: arrays back to back, row-major

The JSON header has ``kind``, ``meta`` (free-form, must be JSON-serializable)
and ``arrays``: a list of ``{name, dtype, shape, offset, nbytes}`` records
with offsets relative to the start of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatVersionMismatch, IoError

MAGIC = b"GADFMCNN"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")
_DTYPES = {"<f4", "<f8", "<i8", "|u1"}


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    records = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<").str if arr.dtype.byteorder != "|" else arr.dtype.str
        if dtype not in _DTYPES:
            raise TypeError(f"array {name!r}: unsupported dtype {arr.dtype}")
        blob = np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes(order="C")
        records.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = _canonical_json({"kind": kind, "meta": meta, "arrays": records})
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_HEAD.pack(MAGIC, VERSION, len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_container(path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEAD.size:
        raise FormatVersionMismatch(f"{path}: truncated header")
    magic, version, hlen = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {VERSION}")
    start = _HEAD.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionMismatch(f"{path}: corrupt header ({exc})") from exc
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise FormatVersionMismatch(f"{path}: holds {kind!r}, expected {expect_kind!r}")
    payload = memoryview(data)[start + hlen:]
    arrays = {}
    for rec in header["arrays"]:
        lo, n = rec["offset"], rec["nbytes"]
        if lo + n > len(payload):
            raise FormatVersionMismatch(f"{path}: payload truncated at {rec['name']!r}")
        arr = np.frombuffer(payload[lo:lo + n], dtype=np.dtype(rec["dtype"]))
        arrays[rec["name"]] = arr.reshape(rec["shape"]).copy()
    return kind, header["meta"], arrays


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
