"""Dataset manifest and sample loading.

Layout: a root directory holding one subdirectory per person with
8-bit PGM/PPM images and 16-bit PGM depth maps, plus a manifest.csv
describing every sample:

    person,sample,image,depth,tag,split

paths relative to the root, tag one of the variation tags, split either
"gallery" or "probe".  Licensed corpora are not bundled; adapt a real
dataset by writing such a manifest for it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .pipeline import FaceSample
from .rasters import RasterError, read_pgm, read_raster

VARIATION_TAGS = ("frontal", "yaw30", "yaw60", "yaw90", "expression",
                  "illumination", "occlusion", "other")
SPLITS = ("gallery", "probe")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    person: str
    sample: str
    image_path: str
    depth_path: str
    tag: str
    split: str

    @property
    def sample_id(self) -> str:
        return f"{self.person}/{self.sample}"


@dataclass
class DatasetManifest:
    root: Path
    entries: list

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    @property
    def persons(self) -> list:
        return sorted({e.person for e in self.entries})


def load_manifest(root, manifest_path=None) -> DatasetManifest:
    root = Path(root)
    path = Path(manifest_path) if manifest_path else root / "manifest.csv"
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"person", "sample", "image", "depth", "tag", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DatasetError(
                f"{path}: manifest header must contain {sorted(required)}"
            )
        for lineno, row in enumerate(reader, start=2):
            person = (row["person"] or "").strip()
            sample = (row["sample"] or "").strip()
            if not person or not sample:
                raise DatasetError(f"{path}:{lineno}: empty person or sample id")
            key = (person, sample)
            if key in seen:
                raise DatasetError(
                    f"{path}:{lineno}: duplicate entry {person}/{sample}"
                )
            seen.add(key)
            tag = row["tag"].strip()
            if tag not in VARIATION_TAGS:
                raise DatasetError(
                    f"{path}:{lineno}: unknown variation tag {tag!r}"
                )
            split = row["split"].strip()
            if split not in SPLITS:
                raise DatasetError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append(ManifestEntry(person, sample, row["image"].strip(),
                                         row["depth"].strip(), tag, split))
    if not entries:
        raise DatasetError(f"{path}: manifest has no entries")
    return DatasetManifest(root=root, entries=entries)


def load_sample(manifest: DatasetManifest, entry: ManifestEntry) -> FaceSample:
    img_path = manifest.root / entry.image_path
    dep_path = manifest.root / entry.depth_path
    for p in (img_path, dep_path):
        if not p.is_file():
            raise DatasetError(f"missing raster file: {p}")
    try:
        image = read_raster(img_path)
    except RasterError as exc:
        raise DatasetError(str(exc)) from exc
    try:
        depth = read_pgm(dep_path)
    except RasterError as exc:
        raise DatasetError(str(exc)) from exc
    if depth.dtype != "uint16":
        depth = depth.astype("uint16")
    if image.shape[:2] != depth.shape:
        raise DatasetError(
            f"{img_path}: image {image.shape[:2]} does not match depth "
            f"{depth.shape} ({dep_path})"
        )
    return FaceSample(image=image, depth=depth, registered=True,
                      label=entry.person, tag=entry.tag)


def load_dataset(root, manifest_path=None):
    """Load the manifest and every referenced sample.

    Returns (manifest, {sample_id: FaceSample}); any missing or
    malformed file fails with the offending path in the message.
    """
    manifest = load_manifest(root, manifest_path)
    samples = {}
    for entry in manifest.entries:
        samples[entry.sample_id] = load_sample(manifest, entry)
    return manifest, samples
