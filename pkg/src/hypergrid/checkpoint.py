"""Single-file tensor archive.

Layout (stable contract, see README for the full description):

    bytes 0..16   magic b"TENSOR-ARCHIVE-1\\n" (17 bytes)
    bytes 17..24  little-endian uint64: manifest length in bytes
    manifest      UTF-8 JSON: {"tensors": [{"name", "shape", "offset",
                  "nbytes"}, ...]} with offsets relative to payload start
    payload       raw little-endian float64 values, row-major
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"TENSOR-ARCHIVE-1\n"


class CheckpointFormatError(ValueError):
    """Raised for malformed archives or shape mismatches on load."""


def save_archive(path, tensors: dict):
    """Write name -> ndarray mappings as one archive file."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(manifest)).tobytes())
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def load_archive(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: not a tensor archive (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise CheckpointFormatError(f"{path}: truncated manifest header")
    mlen = int(np.frombuffer(raw[off:off + 8], dtype="<u8")[0])
    off += 8
    try:
        manifest = json.loads(raw[off:off + mlen].decode("utf-8"))
        entries = manifest["tensors"]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise CheckpointFormatError(f"{path}: corrupt manifest ({e})") from e
    payload = raw[off + mlen:]
    out = {}
    for e in entries:
        try:
            name, shape = e["name"], tuple(e["shape"])
            start, nbytes = e["offset"], e["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CheckpointFormatError(f"{path}: malformed manifest entry {e}") from exc
        if start + nbytes > len(payload):
            raise CheckpointFormatError(
                f"{path}: tensor {name!r} payload out of bounds"
            )
        arr = np.frombuffer(payload[start:start + nbytes], dtype="<f8")
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise CheckpointFormatError(
                f"{path}: tensor {name!r} has {arr.size} values, "
                f"manifest shape {shape}"
            )
        out[name] = arr.reshape(shape).astype(np.float64)
    return out


def load_into_model(path, model):
    """Load an archive into a model, checking names and shapes."""
    state = load_archive(path)
    try:
        model.load_state(state)
    except (KeyError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: {e}") from e
