"""From a registered RGB-D face crop to paired 20x20 patches.

Order of operations mirrors the offline/online preprocessing shared by
enrollment and identification: depth cleanup (median + bilateral), crop
and resize to the 96x96 face frame, blob keypoint detection on the
image, then extraction of a 20x20 image/depth patch pair around every
keypoint.  Depth pixels equal to 0 are invalid measurements throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

FACE_SIZE = 96
PATCH_SIZE = 20
PATCH_HALF = 10
# Luma weights for color-to-gray conversion.
LUMA = (0.299, 0.587, 0.114)


class PipelineError(ValueError):
    pass


@dataclass
class FaceSample:
    """One registered RGB-D capture of a face.

    image: (H, W) or (H, W, 3) uint8; depth: (H, W) uint16 millimeters
    with 0 = invalid.  When registered is set the rasters must be in
    pixel correspondence (identical dimensions).
    """

    image: np.ndarray
    depth: np.ndarray
    registered: bool = True
    label: Optional[str] = None
    tag: Optional[str] = None

    def __post_init__(self):
        if self.image.ndim not in (2, 3):
            raise PipelineError(f"image must be 2-d or 3-d, got {self.image.shape}")
        if self.depth.ndim != 2:
            raise PipelineError(f"depth must be 2-d, got {self.depth.shape}")
        if self.registered and self.image.shape[:2] != self.depth.shape:
            raise PipelineError(
                f"registered sample with image {self.image.shape[:2]} "
                f"!= depth {self.depth.shape}"
            )


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    scale: float
    response: float


@dataclass
class Patch:
    """A standardized 20x20 crop: zero mean, unit population std
    (all-zeros for near-constant windows)."""

    data: np.ndarray
    modality: str
    keypoint: Keypoint
    label: Optional[str] = None


@dataclass
class KeypointConfig:
    max_keypoints: int = 64
    response_threshold: float = 1e-4
    border: int = PATCH_HALF
    filter_sizes: tuple = (9, 15, 21)


# ---------------------------------------------------------------- depth

def depth_preprocess(depth) -> np.ndarray:
    """3x3 invalid-aware median, then a 5x5 bilateral filter.

    The median excludes invalid (0) pixels from its window and leaves a
    window with no valid pixel invalid.  The bilateral stage (spatial
    sigma 2 px, range sigma 30 mm) runs on valid pixels only: invalid
    neighbors get zero weight and invalid centers stay invalid.
    """
    depth = np.asarray(depth)
    if depth.size == 0:
        raise PipelineError("empty depth raster")
    med = _median3_invalid_aware(depth.astype(np.float64))
    out = _bilateral5_valid_only(med, sigma_space=2.0, sigma_range=30.0)
    return np.rint(out).astype(np.uint16)


def _median3_invalid_aware(d):
    h, w = d.shape
    vals = d.copy()
    vals[vals == 0] = np.nan
    padded = np.pad(vals, 1, constant_values=np.nan)
    stack = np.stack([padded[i:i + h, j:j + w]
                      for i in range(3) for j in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(stack, axis=0)
    med[np.isnan(med)] = 0.0
    return np.rint(med)


def _bilateral5_valid_only(d, sigma_space, sigma_range):
    h, w = d.shape
    valid = d > 0
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    vp = np.pad(d, 2)
    mp = np.pad(valid, 2)
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            sw = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_space ** 2))
            shifted = vp[2 + dy:2 + dy + h, 2 + dx:2 + dx + w]
            mask = mp[2 + dy:2 + dy + h, 2 + dx:2 + dx + w]
            rw = np.exp(-((d - shifted) ** 2) / (2.0 * sigma_range ** 2))
            weight = sw * rw * mask
            num += weight * shifted
            den += weight
    out = np.zeros((h, w))
    ok = valid & (den > 0)
    out[ok] = num[ok] / den[ok]
    return out


# ------------------------------------------------------- face normalizing

def _to_gray(image) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def _resize_coords(n_in, n_out):
    """Half-pixel-center source coordinates: identity when n_in == n_out."""
    c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(c, 0.0, n_in - 1.0)


def bilinear_resize(img, out_h, out_w) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = _resize_coords(h, out_h)
    xs = _resize_coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, np.newaxis]
    wx = (xs - x0)[np.newaxis, :]
    tl = img[np.ix_(y0, x0)]
    tr = img[np.ix_(y0, x1)]
    bl = img[np.ix_(y1, x0)]
    br = img[np.ix_(y1, x1)]
    return (tl * (1 - wy) * (1 - wx) + tr * (1 - wy) * wx
            + bl * wy * (1 - wx) + br * wy * wx)


def _bilinear_resize_depth(dep, out_h, out_w) -> np.ndarray:
    """Invalid-aware bilinear: invalid neighbors get zero weight."""
    dep = np.asarray(dep, dtype=np.float64)
    h, w = dep.shape
    valid = (dep > 0).astype(np.float64)
    ys = _resize_coords(h, out_h)
    xs = _resize_coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, np.newaxis]
    wx = (xs - x0)[np.newaxis, :]
    weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    corners = (np.ix_(y0, x0), np.ix_(y0, x1), np.ix_(y1, x0), np.ix_(y1, x1))
    num = np.zeros((out_h, out_w))
    den = np.zeros((out_h, out_w))
    for wgt, ix in zip(weights, corners):
        num += wgt * dep[ix] * valid[ix]
        den += wgt * valid[ix]
    out = np.zeros((out_h, out_w))
    ok = den > 1e-12
    out[ok] = num[ok] / den[ok]
    return out


def normalize_face(sample: FaceSample, box=None):
    """Crop both rasters to `box` and resize to the 96x96 face frame.

    box is (x0, y0, width, height); None takes the whole raster.  Color
    images are converted to gray with the usual luma weights.  Returns
    (image96 uint8, depth96 uint16).
    """
    if not sample.registered:
        raise PipelineError("normalize_face requires a registered sample")
    h, w = sample.depth.shape
    if box is None:
        box = (0, 0, w, h)
    x0, y0, bw, bh = box
    if bw <= 0 or bh <= 0:
        raise PipelineError(f"degenerate box {box}")
    if x0 < 0 or y0 < 0 or x0 + bw > w or y0 + bh > h:
        raise PipelineError(f"box {box} outside raster {w}x{h}")
    gray = _to_gray(sample.image)[y0:y0 + bh, x0:x0 + bw]
    dep = sample.depth[y0:y0 + bh, x0:x0 + bw]
    img96 = np.clip(np.rint(bilinear_resize(gray, FACE_SIZE, FACE_SIZE)), 0, 255)
    dep96 = np.rint(_bilinear_resize_depth(dep, FACE_SIZE, FACE_SIZE))
    return img96.astype(np.uint8), dep96.astype(np.uint16)


# ----------------------------------------------------- keypoint detection

def _integral(img):
    ii = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    ii[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    return ii


def _box_grid(ii, r, ny, nx, oy, ox, bh, bw):
    """Box sums for every center: box top-left at (center + (oy, ox))."""
    y0 = r + oy
    x0 = r + ox
    return (ii[y0 + bh:y0 + bh + ny, x0 + bw:x0 + bw + nx]
            - ii[y0:y0 + ny, x0 + bw:x0 + bw + nx]
            - ii[y0 + bh:y0 + bh + ny, x0:x0 + nx]
            + ii[y0:y0 + ny, x0:x0 + nx])


def _hessian_response(ii, h, w, size):
    """Normalized box-filter det(Hessian) map; -inf where the filter
    does not fit."""
    lobe = size // 3
    r = size // 2
    ny, nx = h - 2 * r, w - 2 * r
    resp = np.full((h, w), -np.inf)
    if ny <= 0 or nx <= 0:
        return resp
    wide = 2 * lobe - 1
    # Dyy: three stacked (lobe x wide) boxes, weights +1 / -2 / +1.
    dyy = (_box_grid(ii, r, ny, nx, -r, -(lobe - 1), lobe, wide)
           - 2.0 * _box_grid(ii, r, ny, nx, -r + lobe, -(lobe - 1), lobe, wide)
           + _box_grid(ii, r, ny, nx, -r + 2 * lobe, -(lobe - 1), lobe, wide))
    dxx = (_box_grid(ii, r, ny, nx, -(lobe - 1), -r, wide, lobe)
           - 2.0 * _box_grid(ii, r, ny, nx, -(lobe - 1), -r + lobe, wide, lobe)
           + _box_grid(ii, r, ny, nx, -(lobe - 1), -r + 2 * lobe, wide, lobe))
    # Dxy: four lobe x lobe boxes in the diagonal quadrants (sign is
    # irrelevant downstream since only Dxy^2 enters the determinant).
    dxy = (_box_grid(ii, r, ny, nx, -lobe, -lobe, lobe, lobe)
           - _box_grid(ii, r, ny, nx, -lobe, 1, lobe, lobe)
           - _box_grid(ii, r, ny, nx, 1, -lobe, lobe, lobe)
           + _box_grid(ii, r, ny, nx, 1, 1, lobe, lobe))
    area = float(size * size)
    dxx /= area
    dyy /= area
    dxy /= area
    resp[r:r + ny, r:r + nx] = dxx * dyy - (0.9 * dxy) ** 2
    return resp


def _shift_max(arr, include_center):
    """Max over the 3x3 spatial neighborhood (optionally incl. center)."""
    p = np.pad(arr, 1, constant_values=-np.inf)
    h, w = arr.shape
    best = np.full((h, w), -np.inf)
    for dy in range(3):
        for dx in range(3):
            if not include_center and dy == 1 and dx == 1:
                continue
            np.maximum(best, p[dy:dy + h, dx:dx + w], out=best)
    return best


def detect_keypoints(image, config: Optional[KeypointConfig] = None):
    """Hessian-determinant blob detection on the 96x96 face image.

    Box-filter second derivatives over an integral image at the
    configured filter sizes, det = Dxx*Dyy - (0.9*Dxy)^2, responses
    thresholded then 3x3x3 non-max suppressed across space and scale.
    Keypoints within `border` px of an edge are discarded (a full 20x20
    patch must fit), the rest sorted by response descending and capped
    at max_keypoints.  Deterministic; an empty list is a valid result.
    """
    config = config or KeypointConfig()
    img = np.asarray(image, dtype=np.float64) / 255.0
    h, w = img.shape
    ii = _integral(img)
    resp = np.stack([_hessian_response(ii, h, w, s)
                     for s in config.filter_sizes])
    n_scales = resp.shape[0]
    keypoints = []
    for s in range(n_scales):
        neighbor = _shift_max(resp[s], include_center=False)
        if s > 0:
            np.maximum(neighbor, _shift_max(resp[s - 1], include_center=True),
                       out=neighbor)
        if s < n_scales - 1:
            np.maximum(neighbor, _shift_max(resp[s + 1], include_center=True),
                       out=neighbor)
        mask = (resp[s] > config.response_threshold) & (resp[s] > neighbor)
        ys, xs = np.nonzero(mask)
        sigma = 1.2 * config.filter_sizes[s] / 9.0
        for y, x in zip(ys, xs):
            keypoints.append(Keypoint(x=int(x), y=int(y), scale=sigma,
                                      response=float(resp[s, y, x])))
    lo = config.border
    hi_x = w - 1 - config.border
    hi_y = h - 1 - config.border
    keypoints = [k for k in keypoints
                 if lo <= k.x <= hi_x and lo <= k.y <= hi_y]
    keypoints.sort(key=lambda k: (-k.response, k.y, k.x))
    return keypoints[: config.max_keypoints]


# -------------------------------------------------------- patch extraction

def standardize_patch(window) -> np.ndarray:
    """Zero-mean unit-variance (population) float32; all-zeros when the
    window is near constant (std < 1e-6)."""
    w = np.asarray(window, dtype=np.float64)
    std = w.std()
    if std < 1e-6:
        return np.zeros(w.shape, dtype=np.float32)
    return ((w - w.mean()) / std).astype(np.float32)


def sample_to_patches(sample: FaceSample, keypoints: Optional[KeypointConfig] = None,
                      box=None, max_invalid_fraction: float = 0.5):
    """Full preprocessing of one sample into paired patch lists.

    Depth cleanup, face normalization, keypoint detection on the image,
    then paired extraction; the shared path for enrollment and querying.
    """
    depth = depth_preprocess(sample.depth)
    img96, dep96 = normalize_face(
        FaceSample(sample.image, depth, sample.registered,
                   sample.label, sample.tag),
        box=box,
    )
    kps = detect_keypoints(img96, keypoints)
    return extract_patches(img96, dep96, kps, label=sample.label,
                           max_invalid_fraction=max_invalid_fraction)


def extract_patches(image96, depth96, keypoints, label=None,
                    max_invalid_fraction=0.5):
    """Paired 20x20 patches around each keypoint.

    Depth patches with more than max_invalid_fraction invalid pixels are
    dropped together with their image twin, so the two returned lists
    stay aligned.  Both modalities are standardized identically.
    """
    image96 = np.asarray(image96)
    depth96 = np.asarray(depth96)
    img_patches = []
    dep_patches = []
    for kp in keypoints:
        y0, x0 = kp.y - PATCH_HALF, kp.x - PATCH_HALF
        if y0 < 0 or x0 < 0 or y0 + PATCH_SIZE > image96.shape[0] \
                or x0 + PATCH_SIZE > image96.shape[1]:
            raise PipelineError(
                f"keypoint ({kp.x}, {kp.y}) too close to the border"
            )
        iw = image96[y0:y0 + PATCH_SIZE, x0:x0 + PATCH_SIZE]
        dw = depth96[y0:y0 + PATCH_SIZE, x0:x0 + PATCH_SIZE]
        if (dw == 0).mean() > max_invalid_fraction:
            continue
        img_patches.append(Patch(standardize_patch(iw), "image", kp, label))
        dep_patches.append(Patch(standardize_patch(dw), "depth", kp, label))
    return img_patches, dep_patches
