"""Synthetic RGB-D identity generator.

Produces a dataset in the standard on-disk layout whose identities are
separable by local texture statistics: every identity owns a fixed mix
of oriented sinusoids plus a private layout of image blobs and depth
bumps (the blobs double as stable keypoint anchors), while individual
samples differ by additive noise, a brightness shift, and a small
translation.  Everything is drawn from one seed, so regeneration is
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rasters import write_pgm


@dataclass
class SyntheticSpec:
    identities: int = 10
    samples_per_identity: int = 20
    gallery_per_identity: int = 14
    image_size: int = 96
    seed: int = 0
    noise_sigma: float = 3.0
    brightness_range: float = 12.0
    max_shift: int = 3
    depth_noise_sigma: float = 1.5
    dead_pixel_fraction: float = 0.003

    def validate(self):
        if self.identities < 2:
            raise ValueError("need >= 2 identities")
        if self.samples_per_identity < 2:
            raise ValueError("need >= 2 samples per identity")
        if not 0 < self.gallery_per_identity < self.samples_per_identity:
            raise ValueError("gallery split must leave at least one probe")
        return self


@dataclass
class _Identity:
    texture: np.ndarray  # oversized canvas, float
    depth: np.ndarray    # oversized canvas, float millimeters


def _identity_canvases(spec: SyntheticSpec, rng: np.random.Generator) -> _Identity:
    size = spec.image_size + 2 * spec.max_shift
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    # Shared face-like shading dome; identity lives in what follows.
    img = 80.0 + 70.0 * np.exp(-r2 / (2 * 34.0 ** 2))
    for _ in range(6):
        freq = rng.uniform(5.0, 12.0) / spec.image_size
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(10.0, 16.0)
        img += amp * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase
        )
    lo = 14 + spec.max_shift
    hi = size - lo
    # A shallow dome keeps the identity-free surface slope from drowning
    # the per-identity relief inside a standardized 20x20 window.
    dep = 940.0 - 60.0 * np.exp(-r2 / (2 * 30.0 ** 2))
    # Identity ripple on the depth surface so depth patches carry signal
    # everywhere, not only near bumps.
    for _ in range(4):
        freq = rng.uniform(6.0, 12.0) / spec.image_size
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(10.0, 16.0)
        dep += amp * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase
        )
    # Blobs and bumps share locations (keypoints fire on image blobs, so
    # the co-located depth structure keeps the depth patches identity
    # bearing, as a real nose or mole would).
    for _ in range(10):
        bx = rng.uniform(lo, hi)
        by = rng.uniform(lo, hi)
        g = np.exp(-((xs - bx) ** 2 + (ys - by) ** 2)
                   / (2 * rng.uniform(2.0, 3.5) ** 2))
        img += rng.uniform(40.0, 60.0) * (1 if rng.random() < 0.5 else -1) * g
        gd = np.exp(-((xs - bx) ** 2 + (ys - by) ** 2)
                    / (2 * rng.uniform(2.5, 5.0) ** 2))
        dep += rng.uniform(22.0, 40.0) * (1 if rng.random() < 0.5 else -1) * gd
    return _Identity(texture=img, depth=dep)


def _render_sample(spec: SyntheticSpec, ident: _Identity,
                   rng: np.random.Generator):
    """One capture: crop a shifted window, add per-sample nuisance."""
    s = spec.image_size
    ms = spec.max_shift
    dy = int(rng.integers(-ms, ms + 1))
    dx = int(rng.integers(-ms, ms + 1))
    brightness = float(rng.uniform(-spec.brightness_range, spec.brightness_range))
    img = ident.texture[ms + dy:ms + dy + s, ms + dx:ms + dx + s].copy()
    img += brightness
    img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img8 = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    dep = ident.depth[ms + dy:ms + dy + s, ms + dx:ms + dx + s].copy()
    dep += rng.normal(0.0, spec.depth_noise_sigma, size=dep.shape)
    dep16 = np.clip(np.rint(dep), 1, 65535).astype(np.uint16)
    dead = rng.random(size=dep16.shape) < spec.dead_pixel_fraction
    dep16[dead] = 0
    if abs(brightness) > 0.6 * spec.brightness_range:
        tag = "illumination"
    elif max(abs(dy), abs(dx)) >= 2:
        tag = "other"
    else:
        tag = "frontal"
    return img8, dep16, tag


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write the dataset under out_dir; returns the manifest path.

    Layout: out_dir/p<ID>/s<K>.img.pgm + s<K>.dep.pgm and a manifest.csv
    with columns person,sample,image,depth,tag,split.  The first
    gallery_per_identity samples of each person are the gallery split,
    the rest probes.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(spec.identities):
        person = f"p{i:02d}"
        ident = _identity_canvases(spec, rng)
        person_dir = out_dir / person
        person_dir.mkdir(exist_ok=True)
        for j in range(spec.samples_per_identity):
            sample = f"s{j:02d}"
            img, dep, tag = _render_sample(spec, ident, rng)
            img_rel = f"{person}/{sample}.img.pgm"
            dep_rel = f"{person}/{sample}.dep.pgm"
            write_pgm(out_dir / img_rel, img)
            write_pgm(out_dir / dep_rel, dep)
            split = "gallery" if j < spec.gallery_per_identity else "probe"
            rows.append((person, sample, img_rel, dep_rel, tag, split))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        fh.write("person,sample,image,depth,tag,split\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return manifest
