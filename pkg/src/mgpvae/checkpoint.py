"""The ``MGPC`` container used for model and predictor checkpoints.

Layout (little-endian)::

    b"MGPC" | u32 version | u32 header length | header JSON (utf-8) | float32 payload

The header holds ``role``, ``config``, ``meta`` and a ``manifest`` of
``{name, shape, offset}`` entries; offsets count float32 elements from the
start of the payload.
"""
import json
import struct

import numpy as np

from .errors import BadMagic, TruncatedFile, VersionMismatch

MAGIC = b"MGPC"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def dumps(role, config, arrays, meta=None):
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {"role": role, "config": config, "meta": meta or {}, "manifest": manifest, "count": offset}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return _HEAD.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def loads(buf):
    """Parse a checkpoint blob into ``(role, config, arrays, meta)``."""
    if len(buf) < 4 and MAGIC.startswith(bytes(buf)):
        raise TruncatedFile("file ends inside the magic number")
    if buf[:4] != MAGIC:
        raise BadMagic(f"not an MGPC checkpoint (magic {bytes(buf[:4])!r})")
    if len(buf) < _HEAD.size:
        raise TruncatedFile("checkpoint header is truncated")
    _, version, n = _HEAD.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    if len(buf) < _HEAD.size + n:
        raise TruncatedFile("checkpoint header block is truncated")
    header = json.loads(bytes(buf[_HEAD.size:_HEAD.size + n]).decode("utf-8"))
    payload = buf[_HEAD.size + n:]
    if len(payload) != 4 * header["count"]:
        raise TruncatedFile(f"payload has {len(payload)} bytes, expected {4 * header['count']}")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {}
    for entry in header["manifest"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = flat[start:start + size].reshape(entry["shape"]).astype(np.float32)
    return header["role"], header["config"], arrays, header["meta"]


def save(path, role, config, arrays, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(role, config, arrays, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
