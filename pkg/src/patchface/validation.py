"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .pipeline import FaceSample


def check_patch_array(X) -> np.ndarray:
    """Coerce to a finite (n, 20, 20) float32 array."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 2 and X.shape == (20, 20):
        X = X[np.newaxis]
    if X.ndim != 3 or X.shape[1:] != (20, 20):
        raise ValueError(f"expected patches of shape (n, 20, 20), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain non-finite values")
    return X


def check_embedding_matrix(X, dim=None) -> np.ndarray:
    """Coerce to a finite (n, M) float array of row embeddings."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[np.newaxis]
    if X.ndim != 2:
        raise ValueError(f"expected (n, M) embeddings, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"embedding dimension {X.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("embeddings contain non-finite values")
    return X


def check_labels(y, n: int) -> list:
    labels = [str(v) for v in np.asarray(y).reshape(-1)]
    if len(labels) != n:
        raise ValueError(f"got {len(labels)} labels for {n} samples")
    if any(not lbl for lbl in labels):
        raise ValueError("empty label")
    return labels


def check_samples(X) -> list:
    samples = list(X)
    if not samples:
        raise ValueError("no samples")
    for i, s in enumerate(samples):
        if not isinstance(s, FaceSample):
            raise TypeError(f"element {i} is {type(s).__name__}, "
                            "expected FaceSample")
    return samples
