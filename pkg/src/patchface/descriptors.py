"""Hand-crafted 20x20-patch descriptors used as baselines.

All descriptors consume a standardized patch (see pipeline) and produce
a fixed-length float32 vector, so the sparse-representation classifier
is agnostic to which feature extractor produced the gallery:

  * hog  - 9 unsigned orientation bins, 5x5-pixel cells (4x4 grid),
           2x2-cell blocks L2-normalized at cell stride 1: 324-d.
  * lbp  - radius-1 8-neighbor codes over the 18x18 interior, uniform
           pattern histogram, L1-normalized: 59-d.
  * raw  - the patch flattened: 400-d.
"""

from __future__ import annotations

import numpy as np

HOG_DIM = 324
LBP_DIM = 59
RAW_DIM = 400

HOG_BINS = 9
HOG_CELL = 5

# 8 neighbors in circular order (dy, dx), starting top-left, clockwise.
LBP_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, 1),
                 (1, 1), (1, 0), (1, -1), (0, -1))


def _check_patch(patch) -> np.ndarray:
    p = np.asarray(patch, dtype=np.float64)
    if p.shape != (20, 20):
        raise ValueError(f"descriptor expects a 20x20 patch, got {p.shape}")
    return p


def _gradients(p):
    """Central differences with replicated borders."""
    gx = np.empty_like(p)
    gx[:, 1:-1] = p[:, 2:] - p[:, :-2]
    gx[:, 0] = p[:, 1] - p[:, 0]
    gx[:, -1] = p[:, -1] - p[:, -2]
    gy = np.empty_like(p)
    gy[1:-1, :] = p[2:, :] - p[:-2, :]
    gy[0, :] = p[1, :] - p[0, :]
    gy[-1, :] = p[-1, :] - p[-2, :]
    return gx, gy


def hog_descriptor(patch) -> np.ndarray:
    """Histogram-of-oriented-gradients vector (324-d).

    Hard orientation binning: each pixel's gradient magnitude lands in
    the single bin of its (angle mod pi); each 2x2-cell block is L2
    normalized with a zero guard, blocks concatenated row-major.
    """
    p = _check_patch(patch)
    gx, gy = _gradients(p)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / np.pi * HOG_BINS).astype(int), HOG_BINS - 1)
    cells = np.zeros((4, 4, HOG_BINS))
    cell_idx = np.arange(20) // HOG_CELL
    np.add.at(cells, (cell_idx[:, np.newaxis], cell_idx[np.newaxis, :], bins),
              mag)
    out = np.zeros(HOG_DIM)
    k = 0
    for by in range(3):
        for bx in range(3):
            block = cells[by:by + 2, bx:bx + 2].reshape(-1)
            norm = np.linalg.norm(block)
            if norm > 1e-12:
                block = block / norm
            out[k:k + 36] = block
            k += 36
    return out.astype(np.float32)


# Code -> histogram bin for the 58 uniform patterns (<= 2 circular
# transitions); everything else shares bin 58.
def _uniform_lookup():
    table = np.full(256, LBP_DIM - 1, dtype=np.int64)
    uniform = []
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        transitions = sum(bits[i] != bits[(i + 1) % 8] for i in range(8))
        if transitions <= 2:
            uniform.append(code)
    for idx, code in enumerate(uniform):
        table[code] = idx
    return table


_LBP_TABLE = _uniform_lookup()


def lbp_descriptor(patch) -> np.ndarray:
    """Uniform-pattern local-binary-pattern histogram (59-d, L1 = 1).

    Bit i of a pixel's code is set when neighbor i >= center, so a
    constant region codes 255 (a uniform pattern).
    """
    p = _check_patch(patch)
    center = p[1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(LBP_NEIGHBORS):
        neighbor = p[1 + dy:19 + dy, 1 + dx:19 + dx]
        codes |= (neighbor >= center).astype(np.int64) << bit
    hist = np.bincount(_LBP_TABLE[codes].reshape(-1), minlength=LBP_DIM)
    return (hist / hist.sum()).astype(np.float32)


def raw_descriptor(patch) -> np.ndarray:
    """The standardized patch itself, flattened row-major (400-d)."""
    return _check_patch(patch).reshape(-1).astype(np.float32)


DESCRIPTORS = {
    "hog": (hog_descriptor, HOG_DIM),
    "lbp": (lbp_descriptor, LBP_DIM),
    "raw": (raw_descriptor, RAW_DIM),
}
