"""Triplet-loss training of the patch embedding network.

A triplet (a, p, n) pairs an anchor with a positive patch of the same
person and a negative patch of a different person.  The per-triplet
term is ||f(a)-f(p)||^2 - ||f(a)-f(n)||^2 + margin; only triplets whose
term is strictly positive ("valid") contribute loss and gradient.  The
triplet pool is regenerated every few epochs with anchors balanced
across persons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .nn import (
    NetworkParams,
    OptimizerState,
    init_params,
    network_backward,
    network_forward,
    sgd_step,
)


class PatchDatasetError(ValueError):
    pass


class PatchDataset:
    """Patches with person labels, indexed by person.

    patches: (n, 20, 20) float32 array; labels: length-n sequence.
    """

    def __init__(self, patches, labels):
        patches = np.asarray(patches, dtype=np.float32)
        if patches.ndim != 3 or patches.shape[1:] != (20, 20):
            raise PatchDatasetError(f"patches must be (n, 20, 20), got {patches.shape}")
        labels = list(labels)
        if len(labels) != len(patches):
            raise PatchDatasetError("label count does not match patch count")
        if any(not str(lbl) for lbl in labels):
            raise PatchDatasetError("empty person label")
        self.patches = patches
        self.labels = [str(lbl) for lbl in labels]
        self.by_person: dict[str, np.ndarray] = {}
        for i, lbl in enumerate(self.labels):
            self.by_person.setdefault(lbl, []).append(i)
        self.by_person = {k: np.array(v) for k, v in self.by_person.items()}
        if len(self.by_person) < 2:
            raise PatchDatasetError(
                f"need >= 2 distinct persons, got {len(self.by_person)}"
            )
        self.persons = sorted(self.by_person)

    def __len__(self):
        return len(self.patches)

    def anchor_persons(self) -> list[str]:
        """Persons with enough patches (>= 2) to anchor a triplet."""
        return [p for p in self.persons if len(self.by_person[p]) >= 2]


@dataclass(frozen=True)
class Triplet:
    """Indices into a PatchDataset."""

    anchor: int
    positive: int
    negative: int


@dataclass
class TripletPool:
    triplets: list[Triplet]
    generation: int = 0


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    momentum: float = 0.09
    weight_decay: float = 0.0005
    margin: float = 0.2
    pool_refresh: int = 10
    pool_size: Optional[int] = None  # default: 32 x number of persons
    seed: int = 0
    normalize_embeddings: bool = False

    def validate(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.pool_refresh < 1:
            raise ValueError("pool refresh interval must be >= 1")
        if self.epochs < 0:
            raise ValueError("epoch count must be >= 0")
        return self


@dataclass
class EpochStats:
    epoch: int
    mean_batch_loss: float
    valid_fraction: float
    seconds: float


def sample_triplet(dataset: PatchDataset, person: str,
                   rng: np.random.Generator) -> Triplet:
    """Draw anchor/positive from `person`, negative from everyone else."""
    try:
        own = dataset.by_person[person]
    except KeyError:
        raise PatchDatasetError(f"unknown person {person!r}") from None
    if len(own) < 2:
        raise PatchDatasetError(
            f"person {person!r} has {len(own)} patch(es); need >= 2 to form a triplet"
        )
    others = np.concatenate(
        [dataset.by_person[p] for p in dataset.persons if p != person]
    )
    a = int(own[rng.integers(len(own))])
    rest = own[own != a]
    p = int(rest[rng.integers(len(rest))])
    n = int(others[rng.integers(len(others))])
    return Triplet(a, p, n)


def build_pool(dataset: PatchDataset, pool_size: int,
               rng: np.random.Generator, generation: int = 0) -> TripletPool:
    """pool_size triplets with anchor counts balanced across persons (+-1)."""
    persons = dataset.anchor_persons()
    if not persons:
        raise PatchDatasetError("no person has >= 2 patches; cannot build a pool")
    base, extra = divmod(pool_size, len(persons))
    triplets = []
    for k, person in enumerate(persons):
        count = base + (1 if k < extra else 0)
        for _ in range(count):
            triplets.append(sample_triplet(dataset, person, rng))
    return TripletPool(triplets=triplets, generation=generation)


def triplet_terms(f_a, f_p, f_n, margin: float):
    """Batched loss terms and validity flags.

    f_a/f_p/f_n: (B, 128) (or single (128,)) embeddings.  Returns
    (terms (B,), valid (B,) bool): term = d_ap^2 - d_an^2 + margin,
    valid = term > 0.
    """
    f_a = np.atleast_2d(np.asarray(f_a, dtype=np.float64))
    f_p = np.atleast_2d(np.asarray(f_p, dtype=np.float64))
    f_n = np.atleast_2d(np.asarray(f_n, dtype=np.float64))
    d_ap = np.sum((f_a - f_p) ** 2, axis=1)
    d_an = np.sum((f_a - f_n) ** 2, axis=1)
    terms = d_ap - d_an + margin
    return terms, terms > 0


def triplet_loss(f_a, f_p, f_n, margin: float):
    """Single-triplet term and validity flag (invalid contributes 0)."""
    terms, valid = triplet_terms(f_a, f_p, f_n, margin)
    return float(terms[0]), bool(valid[0])


def triplet_loss_gradients(f_a, f_p, f_n, margin: float):
    """Gradients of the term w.r.t. each embedding; zeros when invalid.

    Valid triplet: g_a = 2(f_n - f_p), g_p = -2(f_a - f_p),
    g_n = 2(f_a - f_n).
    """
    f_a = np.asarray(f_a)
    f_p = np.asarray(f_p)
    f_n = np.asarray(f_n)
    single = f_a.ndim == 1
    a2, p2, n2 = np.atleast_2d(f_a), np.atleast_2d(f_p), np.atleast_2d(f_n)
    _, valid = triplet_terms(a2, p2, n2, margin)
    m = valid[:, np.newaxis].astype(a2.dtype)
    g_a = 2.0 * (n2 - p2) * m
    g_p = -2.0 * (a2 - p2) * m
    g_n = 2.0 * (a2 - n2) * m
    if single:
        return g_a[0], g_p[0], g_n[0]
    return g_a, g_p, g_n


def _l2_normalize_forward(emb):
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    safe = np.where(norms > 1e-12, norms, 1.0)
    return emb / safe, (emb / safe, safe)


def _l2_normalize_backward(cache, grad):
    z, norms = cache
    dot = np.sum(grad * z, axis=1, keepdims=True)
    return (grad - z * dot) / norms


def _embed_batch(dataset, indices, params, training):
    x = dataset.patches[np.asarray(indices)][:, np.newaxis, :, :]
    return network_forward(x, params, training=training, return_trace=training)


def train(dataset: PatchDataset, config: TrainConfig,
          on_epoch_end: Optional[Callable] = None):
    """Train one network on the dataset; returns (params, history).

    Runs config.epochs epochs over a triplet pool rebuilt every
    config.pool_refresh epochs.  All three patches of a triplet are
    embedded by the one shared parameter set in a single training-mode
    forward (batch statistics over the 3 x batch_size patches); only
    valid triplets contribute gradient.  Fully deterministic for a
    given seed.  on_epoch_end(epoch, params, stats) is called after
    each epoch, e.g. to evaluate a held-out probe set.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = init_params(rng)
    state = OptimizerState.for_params(params)
    pool_size = config.pool_size or 32 * len(dataset.persons)
    pool = build_pool(dataset, pool_size, rng, generation=0)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if epoch > 0 and epoch % config.pool_refresh == 0:
            pool = build_pool(dataset, pool_size, rng,
                              generation=pool.generation + 1)
        order = rng.permutation(len(pool.triplets))
        batch_losses = []
        valid_count = 0
        total_count = 0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            trips = [pool.triplets[i] for i in chunk]
            b = len(trips)
            idx = ([t.anchor for t in trips] + [t.positive for t in trips]
                   + [t.negative for t in trips])
            emb, trace = _embed_batch(dataset, idx, params, training=True)
            if config.normalize_embeddings:
                z, ncache = _l2_normalize_forward(emb)
            else:
                z = emb
            f_a, f_p, f_n = z[:b], z[b:2 * b], z[2 * b:]
            terms, valid = triplet_terms(f_a, f_p, f_n, config.margin)
            batch_loss = float(terms[valid].sum())
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite batch loss at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            g_a, g_p, g_n = triplet_loss_gradients(f_a, f_p, f_n, config.margin)
            grad_z = np.vstack([g_a, g_p, g_n]).astype(emb.dtype)
            if config.normalize_embeddings:
                grad_emb = _l2_normalize_backward(ncache, grad_z)
            else:
                grad_emb = grad_z
            grads = network_backward(trace, grad_emb, params)
            sgd_step(params, grads, state, config.lr, config.momentum,
                     config.weight_decay)
            batch_losses.append(batch_loss)
            valid_count += int(valid.sum())
            total_count += b
        stats = EpochStats(
            epoch=epoch,
            mean_batch_loss=float(np.mean(batch_losses)) if batch_losses else 0.0,
            valid_fraction=valid_count / total_count if total_count else 0.0,
            seconds=time.perf_counter() - t0,
        )
        history.append(stats)
        if on_epoch_end is not None:
            on_epoch_end(epoch, params, stats)
    return params, history


def evaluate_triplets(params: NetworkParams, dataset: PatchDataset,
                      triplets: Sequence[Triplet], margin: float,
                      normalize: bool = False):
    """Mean hinged loss and valid fraction on fixed triplets (inference mode)."""
    if not triplets:
        raise ValueError("no triplets to evaluate")
    idx = ([t.anchor for t in triplets] + [t.positive for t in triplets]
           + [t.negative for t in triplets])
    emb = _embed_batch(dataset, idx, params, training=False)
    if normalize:
        emb, _ = _l2_normalize_forward(emb)
    b = len(triplets)
    terms, valid = triplet_terms(emb[:b], emb[b:2 * b], emb[2 * b:], margin)
    mean_loss = float(np.where(valid, terms, 0.0).mean())
    return mean_loss, float(valid.mean())
