"""HOG and LBP descriptors against direct per-pixel oracles."""

import numpy as np
import pytest

from patchface.descriptors import (
    HOG_DIM,
    LBP_DIM,
    hog_descriptor,
    lbp_descriptor,
    raw_descriptor,
)


def hog_oracle(patch):
    """Naive per-pixel binning with the same conventions as the
    implementation: replicated-border central differences, hard binning
    of angle mod pi into 9 bins, 5x5 cells, 2x2 blocks L2-normalized."""
    p = patch.astype(np.float64)
    cells = np.zeros((4, 4, 9))
    for y in range(20):
        for x in range(20):
            gx = p[y, min(x + 1, 19)] - p[y, max(x - 1, 0)]
            gy = p[min(y + 1, 19), x] - p[max(y - 1, 0), x]
            mag = np.hypot(gx, gy)
            ang = np.arctan2(gy, gx) % np.pi
            b = min(int(ang / np.pi * 9), 8)
            cells[y // 5, x // 5, b] += mag
    out = []
    for by in range(3):
        for bx in range(3):
            block = cells[by:by + 2, bx:bx + 2].reshape(-1)
            n = np.linalg.norm(block)
            out.append(block / n if n > 1e-12 else block)
    return np.concatenate(out)


def lbp_oracle(patch):
    """Direct neighborhood comparison and uniform-pattern histogram."""
    p = patch.astype(np.float64)
    offsets = ((-1, -1), (-1, 0), (-1, 1), (0, 1),
               (1, 1), (1, 0), (1, -1), (0, -1))
    uniform = [c for c in range(256)
               if sum(((c >> i) & 1) != ((c >> ((i + 1) % 8)) & 1)
                      for i in range(8)) <= 2]
    bin_of = {c: i for i, c in enumerate(uniform)}
    hist = np.zeros(59)
    for y in range(1, 19):
        for x in range(1, 19):
            code = 0
            for bit, (dy, dx) in enumerate(offsets):
                if p[y + dy, x + dx] >= p[y, x]:
                    code |= 1 << bit
            hist[bin_of.get(code, 58)] += 1
    return hist / hist.sum()


class TestHog:
    def test_constant_patch_is_zero_vector(self):
        v = hog_descriptor(np.zeros((20, 20), dtype=np.float32))
        assert v.shape == (HOG_DIM,)
        assert not v.any()

    def test_vertical_edge_mass_in_horizontal_bin(self):
        patch = np.zeros((20, 20), dtype=np.float32)
        patch[:, 10:] = 1.0  # vertical step edge -> pure horizontal gradient
        v = hog_descriptor(patch).reshape(9, 4, 9)  # blocks x cells x bins
        assert v.sum() > 0
        assert v[:, :, 0].sum() == pytest.approx(v.sum())

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            patch = rng.normal(size=(20, 20)).astype(np.float32)
            got = hog_descriptor(patch)
            want = hog_oracle(patch)
            np.testing.assert_allclose(got, want, atol=1e-5)


class TestLbp:
    def test_constant_patch_single_bin(self):
        v = lbp_descriptor(np.zeros((20, 20), dtype=np.float32))
        assert v.shape == (LBP_DIM,)
        assert np.count_nonzero(v) == 1
        assert v.sum() == pytest.approx(1.0)
        # code 255 (all neighbors >= center) is the last uniform pattern.
        assert v[57] == pytest.approx(1.0)

    def test_histogram_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            v = lbp_descriptor(rng.normal(size=(20, 20)).astype(np.float32))
            assert v.sum() == pytest.approx(1.0, abs=1e-6)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            patch = rng.normal(size=(20, 20)).astype(np.float32)
            got = lbp_descriptor(patch)
            want = lbp_oracle(patch)
            np.testing.assert_allclose(got, want, atol=1e-7)

    def test_monotone_rescale_invariance(self):
        rng = np.random.default_rng(3)
        patch = rng.normal(size=(20, 20)).astype(np.float32)
        np.testing.assert_array_equal(
            lbp_descriptor(patch), lbp_descriptor(2.5 * patch + 0.0)
        )


class TestRaw:
    def test_flattens_row_major(self):
        patch = np.arange(400, dtype=np.float32).reshape(20, 20)
        v = raw_descriptor(patch)
        assert v.shape == (400,)
        assert v[21] == patch[1, 1]

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match="20x20"):
            raw_descriptor(np.zeros((10, 10)))
