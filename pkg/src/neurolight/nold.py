"""NOLD binary container: portable on-disk storage for field and parameter arrays.

A container is a directory holding a ``manifest.json`` plus one binary blob
per record.  Blobs are little-endian float32, row-major, complex values
interleaved as (re, im) pairs, behind a fixed 64-byte header.  The format is
deliberately dumb so that files round-trip bit-exactly across platforms.

Header layout (little-endian):

    bytes  0:4   magic ``b"NOLD"``
    bytes  4:8   uint32 format version (currently 1)
    bytes  8:12  uint32 dtype code: 1 = float32, 2 = complex64 interleaved
    bytes 12:16  uint32 ndim (at most 8)
    bytes 16:48  uint32[8] dims, unused entries zero
    bytes 48:52  uint32 channel count (dims[0], or 1 for 0-d arrays)
    bytes 52:64  zero padding
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"NOLD"
VERSION = 1
HEADER_SIZE = 64
MAX_NDIM = 8

_DTYPE_FLOAT32 = 1
_DTYPE_COMPLEX64 = 2

MANIFEST_NAME = "manifest.json"


def write_blob(path: str, array: np.ndarray) -> None:
    """Serialize one array to a NOLD blob.

    Real input is stored as float32, complex input as interleaved float32
    (re, im).  Higher-precision input is narrowed; integers are rejected.
    """
    path = os.fspath(path)
    arr = np.asarray(array)
    if arr.ndim > MAX_NDIM:
        raise ValueError(f"array rank {arr.ndim} exceeds NOLD limit {MAX_NDIM}")
    if np.iscomplexobj(arr):
        code = _DTYPE_COMPLEX64
        payload = np.ascontiguousarray(arr.astype(np.complex64))
        flat = payload.view(np.float32)
    elif np.issubdtype(arr.dtype, np.floating):
        code = _DTYPE_FLOAT32
        flat = np.ascontiguousarray(arr.astype(np.float32))
    else:
        raise TypeError(f"NOLD blobs hold float or complex arrays, got {arr.dtype}")

    dims = list(arr.shape) + [0] * (MAX_NDIM - arr.ndim)
    channels = int(arr.shape[0]) if arr.ndim >= 1 else 1
    header = struct.pack(
        "<4sIII8II12x", MAGIC, VERSION, code, arr.ndim, *dims, channels
    )
    assert len(header) == HEADER_SIZE
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(flat.astype("<f4", copy=False).tobytes())
    os.replace(tmp, path)


def read_blob(path: str) -> np.ndarray:
    """Read a NOLD blob back as float32 or complex64."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) != HEADER_SIZE:
            raise ValueError(f"{path}: truncated NOLD header")
        magic, version, code, ndim, *rest = struct.unpack("<4sIII8II12x", header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported NOLD version {version}")
        dims = tuple(rest[:ndim])
        payload = fh.read()

    flat = np.frombuffer(payload, dtype="<f4")
    count = int(np.prod(dims)) if ndim else 1
    if code == _DTYPE_COMPLEX64:
        if flat.size != 2 * count:
            raise ValueError(f"{path}: payload size mismatch")
        return flat.view(np.complex64).reshape(dims).copy()
    if code == _DTYPE_FLOAT32:
        if flat.size != count:
            raise ValueError(f"{path}: payload size mismatch")
        return flat.reshape(dims).copy()
    raise ValueError(f"{path}: unknown dtype code {code}")


def write_manifest(container_dir: str, manifest: dict) -> None:
    """Write the container manifest deterministically (sorted keys)."""
    os.makedirs(container_dir, exist_ok=True)
    path = os.path.join(container_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(container_dir: str) -> dict:
    path = os.path.join(container_dir, MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
