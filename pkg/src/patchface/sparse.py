"""Sparse-representation classification over a dynamic dictionary.

Each query embedding y is reconstructed from the closest gallery
embeddings: the dictionary holds the n_atoms nearest gallery columns
(unit-normalized), the coefficients solve the squared-loss LASSO

    argmin_x  0.5 * ||D x - y||_2^2 + lam * ||x||_1

by cyclic coordinate descent with closed-form soft-threshold updates,
and the patch is assigned to the class whose atoms alone reconstruct y
with the smallest residual.  Patch decisions are fused across patches
and modalities by confidence-weighted voting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .nn import NetworkParams, network_forward
from .pipeline import FaceSample, KeypointConfig, sample_to_patches

MODALITIES = ("image", "depth")


class GalleryError(ValueError):
    pass


@dataclass
class GalleryModality:
    """All enrolled patch embeddings of one modality.

    embeddings: (M, N) with one column per gallery patch; labels and
    sample_ids run parallel to the columns.
    """

    embeddings: np.ndarray
    labels: list[str]
    sample_ids: list[str]

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2:
            raise GalleryError(
                f"embeddings must be (M, N), got {self.embeddings.shape}"
            )
        n = self.embeddings.shape[1]
        if len(self.labels) != n or len(self.sample_ids) != n:
            raise GalleryError("labels/sample_ids must parallel the columns")
        self._unit_atoms = None
        self._usable = None

    @property
    def dim(self) -> int:
        return self.embeddings.shape[0]

    @property
    def size(self) -> int:
        return self.embeddings.shape[1]

    def unit_atoms(self):
        """Cached (unit-norm float64 columns, usable mask); the gallery is
        immutable after enrollment so this is computed once."""
        if self._unit_atoms is None:
            atoms = self.embeddings.astype(np.float64)
            norms = np.linalg.norm(atoms, axis=0)
            usable = norms > 1e-12
            atoms = atoms / np.where(usable, norms, 1.0)
            atoms[:, ~usable] = 0.0
            self._unit_atoms = atoms
            self._usable = usable
        return self._unit_atoms, self._usable


class GalleryIndex:
    """Per-modality gallery embeddings; immutable after construction."""

    def __init__(self, modalities: dict[str, GalleryModality]):
        if not modalities:
            raise GalleryError("gallery has no modalities")
        persons = set()
        for mod in modalities.values():
            persons.update(mod.labels)
        self.persons = sorted(persons)
        for name, mod in modalities.items():
            if mod.size == 0:
                raise GalleryError(f"modality {name!r} is empty")
            missing = persons - set(mod.labels)
            if missing:
                raise GalleryError(
                    f"modality {name!r} missing enrolled person(s): "
                    f"{sorted(missing)}"
                )
        self.modalities = dict(modalities)

    def __getitem__(self, name: str) -> GalleryModality:
        return self.modalities[name]


@dataclass
class Dictionary:
    """The selected atoms for one query: unit-norm columns."""

    atoms: np.ndarray
    labels: list[str]
    source_indices: np.ndarray


@dataclass
class SparseCode:
    x: np.ndarray
    residual: np.ndarray
    lam: float
    n_iter: int
    converged: bool
    objectives: list = field(default_factory=list)
    class_residuals: Optional[dict] = None


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    return v / norm if norm > 1e-12 else v


def select_dictionary(y, gallery: GalleryModality, n_atoms: int) -> Dictionary:
    """The n_atoms gallery columns nearest to y in Euclidean distance.

    Query and atoms are unit-normalized first; ties break toward the
    lower gallery index; zero-norm gallery columns are never selected.
    """
    if gallery.size == 0:
        raise GalleryError("empty gallery")
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    atoms = gallery.embeddings.astype(np.float64)
    norms = np.linalg.norm(atoms, axis=0)
    usable = norms > 1e-12
    if not usable.any():
        raise GalleryError("gallery contains only zero embeddings")
    normalized = np.where(usable, atoms / np.where(usable, norms, 1.0), 0.0)
    yhat = _unit(y)
    d2 = np.sum((normalized - yhat[:, np.newaxis]) ** 2, axis=0)
    d2[~usable] = np.inf
    order = np.argsort(d2, kind="stable")
    take = order[: min(n_atoms, int(usable.sum()))]
    return Dictionary(
        atoms=normalized[:, take],
        labels=[gallery.labels[i] for i in take],
        source_indices=take,
    )


def soft_threshold(value: float, lam: float) -> float:
    """sign(value) * max(|value| - lam, 0)."""
    if value > lam:
        return value - lam
    if value < -lam:
        return value + lam
    return 0.0


def lasso_objective(d, x, y, lam) -> float:
    r = y - d @ x
    return 0.5 * float(r @ r) + lam * float(np.abs(x).sum())


@njit(cache=True)
def _cd_sweeps(gram, b, diag, lam, tol, max_iter, x, corr):
    """Run up to max_iter cyclic sweeps in place; returns (sweeps, converged).

    corr must hold b - gram @ x on entry (b itself for x = 0) and is
    kept current; it is rebuilt from scratch every 32 sweeps to cap
    floating-point drift.
    """
    n = x.shape[0]
    for sweep in range(max_iter):
        max_delta = 0.0
        for j in range(n):
            dj = diag[j]
            if dj <= 0.0:
                continue
            xj = x[j]
            rho = corr[j] + dj * xj
            if rho > lam:
                xnew = (rho - lam) / dj
            elif rho < -lam:
                xnew = (rho + lam) / dj
            else:
                xnew = 0.0
            delta = xnew - xj
            if delta != 0.0:
                x[j] = xnew
                for k in range(n):
                    corr[k] -= gram[j, k] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if (sweep + 1) % 32 == 0:
            for k in range(n):
                acc = b[k]
                for m in range(n):
                    acc -= gram[k, m] * x[m]
                corr[k] = acc
        if max_delta < tol:
            return sweep + 1, True
    return max_iter, False


def lasso_solve(d, y, lam: float, tol: float = 1e-7, max_iter: int = 1000,
                record_objective: bool = False) -> SparseCode:
    """Cyclic coordinate descent on 0.5||Dx - y||^2 + lam||x||_1.

    Correlations are maintained through the Gram matrix so an untouched
    zero coordinate costs O(1) per sweep.  Convergence is max coordinate
    change < tol within a sweep; hitting max_iter sets converged=False
    rather than raising.  With record_objective the exact objective is
    stored after every sweep (it is non-increasing: each update exactly
    minimizes the objective along its coordinate).
    """
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d.ndim != 2 or y.shape != (d.shape[0],):
        raise ValueError(f"dimension mismatch: D {d.shape}, y {y.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    n = d.shape[1]
    gram = np.ascontiguousarray(d.T @ d)
    b = d.T @ y
    diag = np.diag(gram).copy()
    x = np.zeros(n)
    corr = b.copy()  # corr_j = d_j^T (y - D x)
    objectives = []
    if record_objective:
        sweeps = 0
        converged = False
        while sweeps < max_iter:
            done, converged = _cd_sweeps(gram, b, diag, float(lam),
                                         float(tol), 1, x, corr)
            sweeps += done
            objectives.append(lasso_objective(d, x, y, lam))
            if converged:
                break
    else:
        sweeps, converged = _cd_sweeps(gram, b, diag, float(lam), float(tol),
                                       max_iter, x, corr)
    residual = y - d @ x
    return SparseCode(x=x, residual=residual, lam=lam, n_iter=int(sweeps),
                      converged=bool(converged), objectives=objectives)


def class_residuals(d, labels: Sequence[str], x, y,
                    classes: Optional[Sequence[str]] = None) -> dict:
    """Per-class reconstruction residuals r_c = ||y - D delta_c(x)||_2.

    delta_c keeps only coefficients whose atom label is c.  Classes with
    no atom in the dictionary get ||y||_2, the empty-reconstruction
    worst case.
    """
    d = np.asarray(d, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    labels = list(labels)
    if classes is None:
        classes = sorted(set(labels))
    label_arr = np.array(labels)
    y_norm = float(np.linalg.norm(y))
    out = {}
    for c in classes:
        mask = label_arr == c
        if not mask.any():
            out[c] = y_norm
            continue
        out[c] = float(np.linalg.norm(y - d @ (x * mask)))
    return out


def classify_patch(y, gallery: GalleryModality, lam: float = 0.1,
                   n_atoms: int = 200, tol: float = 1e-7,
                   max_iter: int = 1000,
                   classes: Optional[Sequence[str]] = None):
    """Assign one embedding to the class with least reconstruction error.

    The query is unit-normalized to match the atoms, so lam is scale
    free.  Returns (label, confidence); confidence is the relative gap
    (mean residual - min residual) / mean residual, clamped to [0, 1].
    Residual ties break toward the lower label in sort order.
    """
    yhat = _unit(y)
    dictionary = select_dictionary(yhat, gallery, n_atoms)
    code = lasso_solve(dictionary.atoms, yhat, lam, tol=tol, max_iter=max_iter)
    if classes is None:
        classes = sorted(set(gallery.labels))
    residuals = class_residuals(dictionary.atoms, dictionary.labels,
                                code.x, yhat, classes=classes)
    code.class_residuals = residuals
    label = min(residuals, key=lambda c: (residuals[c], c))
    values = np.array(list(residuals.values()))
    mean = float(values.mean())
    confidence = (mean - residuals[label]) / (mean + 1e-12)
    return label, float(np.clip(confidence, 0.0, 1.0))


@dataclass
class IdentityDecision:
    """Predicted person plus the full score breakdown."""

    label: str
    persons: list[str]
    fused_scores: np.ndarray
    modality_scores: dict
    votes: dict
    weights: dict

    def modality_label(self, modality: str) -> Optional[str]:
        """Single-modality decision (same rule as the fused one)."""
        scores = self.modality_scores.get(modality)
        if scores is None or not self.votes.get(modality):
            return None
        return _argmax_label(scores, self.votes[modality], self.persons)


def _score_vector(votes, persons):
    scores = np.zeros(len(persons))
    index = {p: i for i, p in enumerate(persons)}
    for label, conf in votes:
        scores[index[label]] += conf
    if scores.sum() > 0:
        return scores / scores.sum()
    if votes:  # all-zero confidences: fall back to plain vote counts
        for label, _ in votes:
            scores[index[label]] += 1.0
        return scores / scores.sum()
    return scores


def _argmax_label(fused, votes, persons):
    best = fused.max()
    tied = [p for p, s in zip(persons, fused) if s == best]
    if len(tied) == 1:
        return tied[0]
    counts = {p: 0 for p in tied}
    for label, _ in votes:
        if label in counts:
            counts[label] += 1
    top = max(counts.values())
    return sorted(p for p in tied if counts[p] == top)[0]


def fuse_and_decide(image_votes, depth_votes, persons,
                    weights=(0.5, 0.5)) -> IdentityDecision:
    """Score-level fusion of per-patch votes, then the final argmax.

    Per modality, a person's score is the sum of confidences of votes
    naming them, L1-normalized; fused = w_img * s_img + w_dep * s_dep
    with the weights renormalized when a modality has no votes.  Ties
    break by higher raw vote count, then lower label order.
    """
    image_votes = list(image_votes or [])
    depth_votes = list(depth_votes or [])
    if not image_votes and not depth_votes:
        raise ValueError("no votes in either modality")
    persons = list(persons)
    s_img = _score_vector(image_votes, persons)
    s_dep = _score_vector(depth_votes, persons)
    w_img = weights[0] if image_votes else 0.0
    w_dep = weights[1] if depth_votes else 0.0
    total = w_img + w_dep
    if total <= 0:
        raise ValueError("fusion weights sum to zero over voting modalities")
    w_img, w_dep = w_img / total, w_dep / total
    fused = w_img * s_img + w_dep * s_dep
    # Ties break by raw vote count over the modalities actually fused.
    tie_votes = (image_votes if w_img > 0 else []) + \
        (depth_votes if w_dep > 0 else [])
    label = _argmax_label(fused, tie_votes, persons)
    return IdentityDecision(
        label=label,
        persons=persons,
        fused_scores=fused,
        modality_scores={"image": s_img, "depth": s_dep},
        votes={"image": image_votes, "depth": depth_votes},
        weights={"image": w_img, "depth": w_dep},
    )


@dataclass
class SrcConfig:
    lam: float = 0.1
    n_atoms: int = 200
    tol: float = 1e-7
    max_iter: int = 1000
    weight_image: float = 0.5
    weight_depth: float = 0.5


def classify_patches(embeddings, gallery: GalleryModality, src: SrcConfig,
                     classes=None):
    """Per-row classify_patch over an (n, M) embedding matrix."""
    return [
        classify_patch(emb, gallery, lam=src.lam, n_atoms=src.n_atoms,
                       tol=src.tol, max_iter=src.max_iter, classes=classes)
        for emb in np.atleast_2d(embeddings)
    ]


def decide_from_embeddings(embeddings_by_modality: dict,
                           gallery: GalleryIndex,
                           src: SrcConfig) -> IdentityDecision:
    """Classify per-patch embeddings per modality and fuse."""
    votes = {m: [] for m in MODALITIES}
    for modality, embs in embeddings_by_modality.items():
        if embs is None or len(embs) == 0:
            continue
        votes[modality] = classify_patches(
            embs, gallery[modality], src, classes=gallery.persons
        )
    return fuse_and_decide(votes["image"], votes["depth"], gallery.persons,
                           weights=(src.weight_image, src.weight_depth))


def identify(sample: FaceSample, gallery: GalleryIndex,
             params_image: Optional[NetworkParams],
             params_depth: Optional[NetworkParams],
             src: Optional[SrcConfig] = None,
             keypoints: Optional[KeypointConfig] = None,
             modality: str = "both",
             max_invalid_fraction: float = 0.5) -> IdentityDecision:
    """The full online pipeline: preprocess, detect, embed, vote, fuse."""
    src = src or SrcConfig()
    img_patches, dep_patches = sample_to_patches(
        sample, keypoints, max_invalid_fraction=max_invalid_fraction
    )
    embs = {}
    if modality in ("image", "both") and img_patches:
        if params_image is None:
            raise ValueError("image modality requested without image params")
        x = np.stack([p.data for p in img_patches])[:, np.newaxis]
        embs["image"] = network_forward(x, params_image)
    if modality in ("depth", "both") and dep_patches:
        if params_depth is None:
            raise ValueError("depth modality requested without depth params")
        x = np.stack([p.data for p in dep_patches])[:, np.newaxis]
        embs["depth"] = network_forward(x, params_depth)
    return decide_from_embeddings(embs, gallery, src)
