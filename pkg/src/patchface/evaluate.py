"""Enrollment and rank-1 identification evaluation.

An extractor turns patches into fixed-length embeddings: the trained
CNN (one parameter set per modality) or one of the hand-crafted
baselines run through the identical classification pipeline.  The
evaluation report breaks rank-1 accuracy down per variation tag and per
modality (image-only, depth-only, fused), mirroring how RGB-D results
are conventionally tabulated, so real licensed datasets can be slotted
in via a manifest.

Report files are deterministic for fixed models, gallery, and probes:
wall-clock timings are kept out of the CSV and reported separately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Config
from .dataset import DatasetManifest, ManifestEntry, load_sample
from .descriptors import DESCRIPTORS
from .nn import EMBEDDING_DIM, NetworkParams, network_forward
from .pipeline import sample_to_patches
from .sparse import (
    GalleryIndex,
    GalleryModality,
    IdentityDecision,
    SrcConfig,
    classify_patches,
    fuse_and_decide,
)

MODALITIES = ("image", "depth")


class EvaluationError(ValueError):
    pass


class CnnExtractor:
    """Embeds patches with the trained network of each modality."""

    name = "cnn"
    dim = EMBEDDING_DIM

    def __init__(self, params_image: Optional[NetworkParams],
                 params_depth: Optional[NetworkParams]):
        self.params = {"image": params_image, "depth": params_depth}

    def embed(self, patches, modality: str) -> np.ndarray:
        params = self.params.get(modality)
        if params is None:
            raise EvaluationError(f"no model loaded for modality {modality!r}")
        x = np.stack([p.data for p in patches])[:, np.newaxis]
        return network_forward(x, params)


class DescriptorExtractor:
    """Embeds patches with a hand-crafted descriptor (same for both
    modalities)."""

    def __init__(self, kind: str):
        if kind not in DESCRIPTORS:
            raise EvaluationError(f"unknown descriptor {kind!r}")
        self.name = kind
        self._fn, self.dim = DESCRIPTORS[kind]

    def embed(self, patches, modality: str) -> np.ndarray:
        return np.stack([self._fn(p.data) for p in patches])


def make_extractor(name: str, params_image=None, params_depth=None):
    if name == "cnn":
        return CnnExtractor(params_image, params_depth)
    return DescriptorExtractor(name)


def _modalities_for(mode: str):
    if mode == "both":
        return MODALITIES
    if mode in MODALITIES:
        return (mode,)
    raise EvaluationError(f"unknown modality {mode!r}")


def enroll(manifest: DatasetManifest, extractor, config: Config,
           modality: str = "both", entries=None) -> GalleryIndex:
    """Embed every gallery patch and build the per-modality index."""
    entries = list(entries) if entries is not None else manifest.split("gallery")
    if not entries:
        raise EvaluationError("no gallery entries to enroll")
    wanted = _modalities_for(modality)
    columns = {m: [] for m in wanted}
    labels = {m: [] for m in wanted}
    ids = {m: [] for m in wanted}
    for entry in entries:
        sample = load_sample(manifest, entry)
        img_patches, dep_patches = sample_to_patches(
            sample, config.keypoint_config(),
            max_invalid_fraction=config.max_invalid_fraction,
        )
        per_mod = {"image": img_patches, "depth": dep_patches}
        for m in wanted:
            patches = per_mod[m]
            if not patches:
                continue
            emb = extractor.embed(patches, m)
            columns[m].append(emb)
            labels[m].extend([entry.person] * len(patches))
            ids[m].extend([entry.sample_id] * len(patches))
    modalities = {}
    for m in wanted:
        if not columns[m]:
            raise EvaluationError(f"no patches enrolled for modality {m!r}")
        emb = np.vstack(columns[m]).T.astype(np.float32)
        modalities[m] = GalleryModality(emb, labels[m], ids[m])
    return GalleryIndex(modalities)


@dataclass
class QueryResult:
    sample_id: str
    true_label: Optional[str]
    tag: str
    predictions: dict           # modality-or-"fused" -> label (or None)
    fused_scores: np.ndarray
    persons: list


@dataclass
class EvalReport:
    persons: list
    results: list
    config_lines: list
    extractor: str
    modality: str
    seconds: float = 0.0

    def accuracy(self, kind: str = "fused", tag: Optional[str] = None) -> float:
        total = correct = 0
        for r in self.results:
            if tag is not None and r.tag != tag:
                continue
            pred = r.predictions.get(kind)
            if r.true_label is None or pred is None:
                continue
            total += 1
            correct += pred == r.true_label
        return correct / total if total else float("nan")

    def counts(self, kind: str = "fused", tag: Optional[str] = None):
        total = correct = 0
        for r in self.results:
            if tag is not None and r.tag != tag:
                continue
            pred = r.predictions.get(kind)
            if r.true_label is None or pred is None:
                continue
            total += 1
            correct += pred == r.true_label
        return correct, total

    @property
    def tags(self) -> list:
        return sorted({r.tag for r in self.results})

    def confusion(self, kind: str = "fused") -> dict:
        out = {}
        for r in self.results:
            pred = r.predictions.get(kind)
            if r.true_label is None or pred is None:
                continue
            out[(r.true_label, pred)] = out.get((r.true_label, pred), 0) + 1
        return out

    def to_csv_lines(self) -> list:
        lines = [f"# extractor = {self.extractor}",
                 f"# modality = {self.modality}"]
        lines += [f"# {line}" for line in self.config_lines]
        header = ["sample", "true", "tag", "pred_fused", "pred_image",
                  "pred_depth"] + [f"score_{p}" for p in self.persons]
        lines.append(",".join(header))
        for r in self.results:
            row = [r.sample_id, r.true_label or "", r.tag,
                   r.predictions.get("fused") or "",
                   r.predictions.get("image") or "",
                   r.predictions.get("depth") or ""]
            row += [f"{s:.9f}" for s in r.fused_scores]
            lines.append(",".join(row))
        for kind in ("image", "depth", "fused"):
            c, t = self.counts(kind)
            lines.append(f"# accuracy_{kind}_overall = {c}/{t}")
            for tag in self.tags:
                c, t = self.counts(kind, tag)
                lines.append(f"# accuracy_{kind}_{tag} = {c}/{t}")
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_csv_lines()) + "\n")

    def summary_table(self) -> str:
        rows = [f"{'pose/tag':<14} {'modality':<8} {'rank-1':>8}"]
        for tag in self.tags + [None]:
            label = tag or "overall"
            for kind in ("image", "depth", "fused"):
                acc = self.accuracy(kind, tag)
                pct = "n/a" if np.isnan(acc) else f"{100 * acc:.2f}%"
                rows.append(f"{label:<14} {kind:<8} {pct:>8}")
        return "\n".join(rows)


def decide_entry(manifest: DatasetManifest, entry: ManifestEntry,
                 gallery: GalleryIndex, extractor, config: Config,
                 modality: str = "both") -> QueryResult:
    """Classify one probe; fused plus per-modality predictions."""
    sample = load_sample(manifest, entry)
    img_patches, dep_patches = sample_to_patches(
        sample, config.keypoint_config(),
        max_invalid_fraction=config.max_invalid_fraction,
    )
    wanted = _modalities_for(modality)
    src = config.src_config()
    votes = {m: [] for m in MODALITIES}
    per_mod = {"image": img_patches, "depth": dep_patches}
    for m in wanted:
        patches = per_mod[m]
        if not patches or m not in gallery.modalities:
            continue
        emb = extractor.embed(patches, m)
        votes[m] = classify_patches(emb, gallery[m], src,
                                    classes=gallery.persons)
    predictions = {}
    weights = (src.weight_image if "image" in wanted else 0.0,
               src.weight_depth if "depth" in wanted else 0.0)
    try:
        fused = fuse_and_decide(votes["image"], votes["depth"],
                                gallery.persons, weights=weights)
    except ValueError as exc:
        raise EvaluationError(f"{entry.sample_id}: {exc}") from exc
    predictions["fused"] = fused.label
    for m in MODALITIES:
        predictions[m] = fused.modality_label(m)
    return QueryResult(
        sample_id=entry.sample_id,
        true_label=entry.person,
        tag=entry.tag,
        predictions=predictions,
        fused_scores=fused.fused_scores,
        persons=gallery.persons,
    )


def evaluate(manifest: DatasetManifest, gallery: GalleryIndex, extractor,
             config: Config, modality: str = "both",
             entries=None) -> EvalReport:
    """Identify every probe entry and aggregate rank-1 accuracies.

    Probes are processed in manifest order, so the report is
    deterministic for fixed inputs.
    """
    entries = list(entries) if entries is not None else manifest.split("probe")
    if not entries:
        raise EvaluationError("no probe entries to evaluate")
    t0 = time.perf_counter()
    results = [decide_entry(manifest, e, gallery, extractor, config, modality)
               for e in entries]
    return EvalReport(
        persons=gallery.persons,
        results=results,
        config_lines=config.to_lines(),
        extractor=extractor.name,
        modality=modality,
        seconds=time.perf_counter() - t0,
    )
