"""Binary model file format.

Layout, all integers and floats little-endian:

    magic   "PFNN" (4 bytes)
    version u8 (currently 1)
    count   u8, number of tensors that follow
    tensor  rank u8, then rank x u32 dims, then prod(dims) x f32 payload

Tensors appear in PARAM_SHAPES order, followed by bn_eps stored as a
single-element tensor, so serialize/deserialize round-trips bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .network import PARAM_SHAPES, NetworkParams

MAGIC = b"PFNN"
VERSION = 1


class ModelFormatError(Exception):
    """Base class for malformed model files."""


class BadMagicError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


def serialize_params(params: NetworkParams) -> bytes:
    params.validate()
    out = [MAGIC, struct.pack("<BB", VERSION, len(PARAM_SHAPES) + 1)]
    tensors = [getattr(params, name) for name, _ in PARAM_SHAPES]
    tensors.append(np.array([params.bn_eps], dtype=np.float32))
    for arr in tensors:
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def deserialize_params(data: bytes) -> NetworkParams:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = struct.unpack("<BB", r.take(2))
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}")
    if count != len(PARAM_SHAPES) + 1:
        raise ModelFormatError(f"expected {len(PARAM_SHAPES) + 1} tensors, file has {count}")
    tensors = []
    for _ in range(count):
        (rank,) = struct.unpack("<B", r.take(1))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * size)
        tensors.append(np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after payload")
    named = {}
    for (name, shape), arr in zip(PARAM_SHAPES, tensors):
        if arr.shape != shape:
            raise ModelFormatError(f"{name} stored with shape {arr.shape}, expected {shape}")
    for (name, _), arr in zip(PARAM_SHAPES, tensors):
        named[name] = arr
    eps_arr = tensors[-1]
    if eps_arr.shape != (1,):
        raise ModelFormatError(f"epsilon tensor has shape {eps_arr.shape}, expected (1,)")
    return NetworkParams(**named, bn_eps=float(eps_arr[0])).validate()


def save_params(params: NetworkParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_params(params))


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        return deserialize_params(fh.read())
