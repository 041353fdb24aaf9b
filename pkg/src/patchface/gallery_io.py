"""Binary gallery file: enrolled patch embeddings for all modalities.

Same conventions as the model format (little-endian integers, float32
payloads).  Layout:

    magic    "PFGA" (4 bytes)
    version  u8 (currently 1)
    n_mod    u8
    per modality:
      name      u8 length + utf-8
      M         u32 embedding dimension
      N         u32 column count
      persons   u16 count, then per person u16 length + utf-8
      samples   u32 count, then per sample id u16 length + utf-8
      columns   N x (u16 person index, u32 sample index)
      payload   N x M float32, one column after another

Round-trips bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .sparse import GalleryIndex, GalleryModality

MAGIC = b"PFGA"
VERSION = 1


class GalleryFormatError(Exception):
    pass


class GalleryBadMagicError(GalleryFormatError):
    pass


class GalleryVersionError(GalleryFormatError):
    pass


class GalleryTruncatedError(GalleryFormatError):
    pass


def _pack_str(text: str, width: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(f"<{width}", len(raw)) + raw


def serialize_gallery(gallery: GalleryIndex) -> bytes:
    out = [MAGIC, struct.pack("<BB", VERSION, len(gallery.modalities))]
    for name in sorted(gallery.modalities):
        mod = gallery[name]
        persons = sorted(set(mod.labels))
        sample_ids = sorted(set(mod.sample_ids))
        p_index = {p: i for i, p in enumerate(persons)}
        s_index = {s: i for i, s in enumerate(sample_ids)}
        out.append(_pack_str(name, "B"))
        out.append(struct.pack("<II", mod.dim, mod.size))
        out.append(struct.pack("<H", len(persons)))
        out.extend(_pack_str(p, "H") for p in persons)
        out.append(struct.pack("<I", len(sample_ids)))
        out.extend(_pack_str(s, "H") for s in sample_ids)
        for label, sid in zip(mod.labels, mod.sample_ids):
            out.append(struct.pack("<HI", p_index[label], s_index[sid]))
        out.append(np.ascontiguousarray(mod.embeddings.T, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise GalleryTruncatedError(
                f"need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def take_str(self, width: str) -> str:
        size = struct.calcsize(f"<{width}")
        (length,) = struct.unpack(f"<{width}", self.take(size))
        return self.take(length).decode("utf-8")


def deserialize_gallery(data: bytes) -> GalleryIndex:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise GalleryBadMagicError(f"bad magic, expected {MAGIC!r}")
    version, n_mod = struct.unpack("<BB", r.take(2))
    if version != VERSION:
        raise GalleryVersionError(f"unsupported gallery version {version}")
    modalities = {}
    for _ in range(n_mod):
        name = r.take_str("B")
        dim, size = struct.unpack("<II", r.take(8))
        (n_persons,) = struct.unpack("<H", r.take(2))
        persons = [r.take_str("H") for _ in range(n_persons)]
        (n_samples,) = struct.unpack("<I", r.take(4))
        sample_ids = [r.take_str("H") for _ in range(n_samples)]
        labels = []
        ids = []
        for _ in range(size):
            p_idx, s_idx = struct.unpack("<HI", r.take(6))
            if p_idx >= n_persons or s_idx >= n_samples:
                raise GalleryFormatError("column references unknown person/sample")
            labels.append(persons[p_idx])
            ids.append(sample_ids[s_idx])
        payload = r.take(4 * dim * size)
        emb = np.frombuffer(payload, dtype="<f4").reshape(size, dim).T.copy()
        modalities[name] = GalleryModality(emb, labels, ids)
    if r.pos != len(data):
        raise GalleryFormatError(f"{len(data) - r.pos} trailing bytes")
    return GalleryIndex(modalities)


def save_gallery(gallery: GalleryIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_gallery(gallery))


def load_gallery(path) -> GalleryIndex:
    with open(path, "rb") as fh:
        return deserialize_gallery(fh.read())
