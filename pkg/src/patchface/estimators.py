"""scikit-learn style estimators wrapping the pipeline.

These follow the fit/transform/predict conventions (and inherit
get_params/set_params from BaseEstimator) so the pieces compose with
the wider ecosystem: the embedder is a transformer from patches to
128-d vectors, the sparse-representation classifier a standard
classifier over embeddings, and RGBDFaceIdentifier the whole system
fitted on labeled FaceSamples.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import Config
from .descriptors import DESCRIPTORS
from .nn import network_forward
from .pipeline import sample_to_patches
from .sparse import (
    GalleryIndex,
    GalleryModality,
    SrcConfig,
    classify_patch,
    classify_patches,
    decide_from_embeddings,
)
from .triplet import PatchDataset, TrainConfig, train
from .validation import (
    check_embedding_matrix,
    check_labels,
    check_patch_array,
    check_samples,
)


class TripletEmbedder(BaseEstimator, TransformerMixin):
    """Patch-to-embedding transformer trained with the triplet loss.

    fit(X, y) expects X of shape (n, 20, 20) (standardized patches) and
    person labels y; transform(X) returns (n, 128) embeddings from the
    trained network in inference mode.
    """

    def __init__(self, epochs=50, batch_size=64, learning_rate=0.001,
                 momentum=0.09, weight_decay=0.0005, margin=0.2,
                 pool_refresh=10, pool_size=None,
                 normalize_embeddings=False, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.margin = margin
        self.pool_refresh = pool_refresh
        self.pool_size = pool_size
        self.normalize_embeddings = normalize_embeddings
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            lr=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, margin=self.margin,
            pool_refresh=self.pool_refresh, pool_size=self.pool_size,
            seed=self.seed,
            normalize_embeddings=self.normalize_embeddings,
        )

    def fit(self, X, y, on_epoch_end=None):
        X = check_patch_array(X)
        labels = check_labels(y, len(X))
        dataset = PatchDataset(X, labels)
        self.params_, history = train(dataset, self._train_config(),
                                      on_epoch_end=on_epoch_end)
        self.history_ = history
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("TripletEmbedder is not fitted")
        X = check_patch_array(X)
        return network_forward(X[:, np.newaxis], self.params_)


class PatchDescriptor(BaseEstimator, TransformerMixin):
    """Stateless hand-crafted descriptor transformer (hog/lbp/raw)."""

    def __init__(self, kind="hog"):
        self.kind = kind

    def fit(self, X=None, y=None):
        if self.kind not in DESCRIPTORS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        return self

    def transform(self, X) -> np.ndarray:
        if self.kind not in DESCRIPTORS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        fn, _ = DESCRIPTORS[self.kind]
        X = check_patch_array(X)
        return np.stack([fn(p) for p in X])


class SparseRepresentationClassifier(BaseEstimator, ClassifierMixin):
    """Classify embeddings by sparse reconstruction over gallery atoms.

    fit(X, y) stores the rows of X as gallery columns; predict runs the
    dynamic-dictionary LASSO classification per sample.
    """

    def __init__(self, lam=0.1, n_atoms=200, tol=1e-7, max_iter=1000):
        self.lam = lam
        self.n_atoms = n_atoms
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_embedding_matrix(X)
        labels = check_labels(y, len(X))
        ids = [str(i) for i in range(len(X))]
        self.gallery_ = GalleryModality(X.T.astype(np.float32), labels, ids)
        self.classes_ = np.array(sorted(set(labels)))
        return self

    def _check_fitted(self):
        if not hasattr(self, "gallery_"):
            raise NotFittedError("SparseRepresentationClassifier is not fitted")

    def _src_config(self) -> SrcConfig:
        return SrcConfig(lam=self.lam, n_atoms=self.n_atoms, tol=self.tol,
                         max_iter=self.max_iter)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_embedding_matrix(X, dim=self.gallery_.dim)
        votes = classify_patches(X, self.gallery_, self._src_config(),
                                 classes=list(self.classes_))
        return np.array([label for label, _ in votes])

    def predict_with_confidence(self, X):
        """Per-sample (label, confidence) pairs."""
        self._check_fitted()
        X = check_embedding_matrix(X, dim=self.gallery_.dim)
        return [
            classify_patch(row, self.gallery_, lam=self.lam,
                           n_atoms=self.n_atoms, tol=self.tol,
                           max_iter=self.max_iter,
                           classes=list(self.classes_))
            for row in X
        ]


class RGBDFaceIdentifier(BaseEstimator, ClassifierMixin):
    """End-to-end identifier over registered RGB-D face samples.

    fit(X, y) takes FaceSamples with person labels: it trains one
    embedder per modality on the samples' patches and enrolls the same
    patches as the gallery.  predict identifies each sample by fused
    per-patch sparse-representation voting.
    """

    def __init__(self, epochs=50, batch_size=64, learning_rate=0.001,
                 momentum=0.09, weight_decay=0.0005, margin=0.2,
                 pool_refresh=10, normalize_embeddings=False,
                 max_keypoints=64, keypoint_threshold=1e-4,
                 max_invalid_fraction=0.5, lam=0.1, n_atoms=200,
                 weight_image=0.5, weight_depth=0.5, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.margin = margin
        self.pool_refresh = pool_refresh
        self.normalize_embeddings = normalize_embeddings
        self.max_keypoints = max_keypoints
        self.keypoint_threshold = keypoint_threshold
        self.max_invalid_fraction = max_invalid_fraction
        self.lam = lam
        self.n_atoms = n_atoms
        self.weight_image = weight_image
        self.weight_depth = weight_depth
        self.seed = seed

    def _config(self) -> Config:
        return Config(
            seed=self.seed, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, margin=self.margin,
            pool_refresh=self.pool_refresh,
            normalize_embeddings=self.normalize_embeddings,
            max_keypoints=self.max_keypoints,
            keypoint_threshold=self.keypoint_threshold,
            max_invalid_fraction=self.max_invalid_fraction,
            lasso_lambda=self.lam, n_atoms=self.n_atoms,
            weight_image=self.weight_image, weight_depth=self.weight_depth,
        )

    def _patches(self, samples):
        cfg = self._config()
        out = {"image": ([], []), "depth": ([], [])}
        for sample in samples:
            img_p, dep_p = sample_to_patches(
                sample, cfg.keypoint_config(),
                max_invalid_fraction=cfg.max_invalid_fraction,
            )
            for modality, patches in (("image", img_p), ("depth", dep_p)):
                for p in patches:
                    out[modality][0].append(p.data)
                    out[modality][1].append(sample.label)
        return out

    def fit(self, X, y):
        samples = check_samples(X)
        labels = check_labels(y, len(samples))
        for sample, label in zip(samples, labels):
            sample.label = label
        cfg = self._config()
        per_mod = self._patches(samples)
        self.embedders_ = {}
        galleries = {}
        for offset, modality in enumerate(("image", "depth")):
            data, lab = per_mod[modality]
            dataset = PatchDataset(np.stack(data), lab)
            tc = cfg.train_config(seed=self.seed + offset)
            params, _ = train(dataset, tc)
            self.embedders_[modality] = params
            emb = network_forward(dataset.patches[:, np.newaxis], params)
            galleries[modality] = GalleryModality(
                emb.T.astype(np.float32), lab,
                [str(i) for i in range(len(lab))],
            )
        self.gallery_ = GalleryIndex(galleries)
        self.classes_ = np.array(self.gallery_.persons)
        return self

    def decide(self, sample):
        if not hasattr(self, "gallery_"):
            raise NotFittedError("RGBDFaceIdentifier is not fitted")
        cfg = self._config()
        img_p, dep_p = sample_to_patches(
            sample, cfg.keypoint_config(),
            max_invalid_fraction=cfg.max_invalid_fraction,
        )
        embs = {}
        if img_p:
            x = np.stack([p.data for p in img_p])[:, np.newaxis]
            embs["image"] = network_forward(x, self.embedders_["image"])
        if dep_p:
            x = np.stack([p.data for p in dep_p])[:, np.newaxis]
            embs["depth"] = network_forward(x, self.embedders_["depth"])
        return decide_from_embeddings(embs, self.gallery_, cfg.src_config())

    def predict(self, X) -> np.ndarray:
        samples = check_samples(X)
        return np.array([self.decide(s).label for s in samples])
