"""PGM/PPM raster I/O.

Images are 8-bit binary PGM (P5, maxval 255) or PPM (P6); depth maps are
16-bit binary PGM (P5, maxval 65535) storing millimeters big-endian per
the netpbm convention, with 0 marking an invalid measurement.
"""

from __future__ import annotations

import numpy as np


class RasterError(ValueError):
    pass


def _read_header(data: bytes, path) -> tuple[bytes, list[int], int]:
    """Parse magic + 3 header ints, skipping whitespace and # comments."""
    if len(data) < 2:
        raise RasterError(f"{path}: file too short for a PNM header")
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise RasterError(f"{path}: bad header token {token!r}")
        fields.append(int(token))
    if pos >= len(data):
        raise RasterError(f"{path}: header not followed by payload")
    pos += 1  # single whitespace byte after maxval
    return magic, fields, pos


def read_pgm(path) -> np.ndarray:
    """Read binary PGM; uint8 for maxval <= 255, big-endian uint16 above."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, (width, height, maxval), pos = _read_header(data, path)
    if magic != b"P5":
        raise RasterError(f"{path}: expected P5 magic, got {magic!r}")
    if maxval <= 0 or maxval > 65535:
        raise RasterError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise RasterError(f"{path}: truncated payload ({len(payload)}/{need} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16) if maxval > 255 else arr.copy()


def read_ppm(path) -> np.ndarray:
    """Read binary 8-bit PPM as (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, (width, height, maxval), pos = _read_header(data, path)
    if magic != b"P6":
        raise RasterError(f"{path}: expected P6 magic, got {magic!r}")
    if maxval != 255:
        raise RasterError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise RasterError(f"{path}: truncated payload ({len(payload)}/{need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def read_raster(path) -> np.ndarray:
    """Read PGM or PPM, dispatching on the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    if magic == b"P6":
        return read_ppm(path)
    raise RasterError(f"{path}: not a binary PGM/PPM (magic {magic!r})")


def write_pgm(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise RasterError(f"PGM array must be 2-d, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        maxval, payload = 255, arr.tobytes()
    elif arr.dtype == np.uint16:
        maxval, payload = 65535, arr.astype(">u2").tobytes()
    else:
        raise RasterError(f"PGM array must be uint8 or uint16, got {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode())
        fh.write(payload)


def write_ppm(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise RasterError(f"PPM array must be (H, W, 3) uint8, got "
                          f"{arr.shape} {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(arr.tobytes())
