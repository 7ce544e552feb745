"""Acquisition functions.

Classical phase: ``rand``, ``core``, ``ent``, ``marg``. Balancing phase:
``b-core`` and ``poor``, which need each pick's label before choosing the next
one and therefore take a ``label_fn`` that queries the oracle.

Pool arguments are ``(ids, features)`` pairs. Every ranking breaks ties by the
lowest sample id, so pools are sorted by id before scoring.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    CapabilityError,
    DegenerateDistributionError,
    RequestError,
    StateError,
)
from .learner import LearnerModel, embed, predict_proba, restrict_probs
from .seeding import derive_rng

CLASSICAL_AFS = ("rand", "core", "ent", "marg")
BALANCING_AFS = ("rand", "poor", "b-core", "same")
MARGIN_MODES = ("standard", "paper_literal")
TIE_TOL = 1e-9

LabelFn = Callable[[int], int]


def _sorted_pool(ids, features):
    ids = np.asarray(ids, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    order = np.argsort(ids, kind="stable")
    return ids[order], features[order]


def _check_k(k: int, n: int) -> None:
    if k < 0:
        raise RequestError("k must be non-negative")
    if k > n:
        raise RequestError(f"requested {k} samples from a pool of {n}")


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances from the direct difference (no dot-product expansion)."""
    out = np.empty((len(a), len(b)))
    for i in range(0, len(a), 256):
        diff = a[i:i + 256, None, :] - b[None, :, :]
        out[i:i + 256] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def distances_to(a: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = a - point
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


# ---------------------------------------------------------------------------
# classical phase


def select_random(ids: Sequence[int], k: int, seed: int) -> list[int]:
    """k distinct ids uniformly without replacement."""
    ids = np.sort(np.asarray(ids, dtype=np.int64))
    _check_k(k, len(ids))
    rng = derive_rng(seed, "rand")
    return [int(i) for i in rng.choice(ids, size=k, replace=False)]


def select_coreset(pool_ids, pool_features, labeled_features, k: int, model: LearnerModel) -> list[int]:
    """Greedy k-center: each pick maximizes its distance to the nearest labeled
    embedding, earlier picks of the batch included."""
    ids, feats = _sorted_pool(pool_ids, pool_features)
    if len(ids) == 0:
        raise RequestError("empty pool")
    _check_k(k, len(ids))
    labeled_features = np.asarray(labeled_features, dtype=np.float64)
    if len(labeled_features) == 0:
        raise RequestError("core-set needs a non-empty labeled reference set")
    emb = embed(model, feats)
    min_dist = pairwise_distances(emb, embed(model, labeled_features)).min(axis=1)
    available = np.ones(len(ids), dtype=bool)
    picked = []
    for _ in range(k):
        j = int(np.argmax(np.where(available, min_dist, -np.inf)))
        picked.append(int(ids[j]))
        available[j] = False
        min_dist = np.minimum(min_dist, distances_to(emb, emb[j]))
    return picked


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logp).sum(axis=-1)


def margin(p: np.ndarray) -> np.ndarray:
    """Difference between the two largest probabilities per row."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise CapabilityError("margin needs at least two classes")
    top2 = np.sort(p, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def _detected_probs(model, feats, detected_classes):
    p = predict_proba(model, feats)
    if p.ndim == 1:
        p = p[None, :]
    return restrict_probs(p, detected_classes)


def select_entropy(pool_ids, pool_features, k: int, model: LearnerModel,
                   detected_classes: Iterable[int] | None = None) -> list[int]:
    """Top-k by entropy over the detected classes (renormalized)."""
    ids, feats = _sorted_pool(pool_ids, pool_features)
    if len(ids) == 0:
        raise RequestError("empty pool")
    _check_k(k, len(ids))
    detected = None if detected_classes is None else list(detected_classes)
    h = entropy(_detected_probs(model, feats, detected))
    order = np.lexsort((ids, -h))
    return [int(i) for i in ids[order[:k]]]


def select_margin(pool_ids, pool_features, k: int, model: LearnerModel,
                  mode: str = "standard",
                  detected_classes: Iterable[int] | None = None) -> list[int]:
    """Top-k by top-2 margin: smallest first (``standard``) or largest first
    (``paper_literal``)."""
    if mode not in MARGIN_MODES:
        raise RequestError(f"unknown margin mode {mode!r}")
    ids, feats = _sorted_pool(pool_ids, pool_features)
    if len(ids) == 0:
        raise RequestError("empty pool")
    _check_k(k, len(ids))
    detected = None if detected_classes is None else list(detected_classes)
    p = _detected_probs(model, feats, detected)
    if p.shape[-1] < 2:
        raise CapabilityError("margin sampling needs a model predicting at least two classes")
    m = margin(p)
    key = m if mode == "standard" else -m
    order = np.lexsort((ids, key))
    return [int(i) for i in ids[order[:k]]]


# ---------------------------------------------------------------------------
# balancing phase


@dataclass
class ClassDistribution:
    """Labeled counts and embedding centroids of the current state's new classes.

    Only classes with at least one labeled sample take part in the
    minority/majority split: minority when ``count < mean``, majority otherwise.
    """

    new_classes: tuple[int, ...]
    counts: dict[int, int] = field(default_factory=dict)
    centroids: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_labeled(cls, new_classes: Iterable[int], labels, embeddings) -> "ClassDistribution":
        dist = cls(tuple(sorted(int(c) for c in new_classes)))
        labels = np.asarray(labels, dtype=np.int64)
        embeddings = np.asarray(embeddings, dtype=np.float64)
        for c in dist.new_classes:
            mask = labels == c
            if mask.any():
                dist.counts[c] = int(mask.sum())
                dist.centroids[c] = embeddings[mask].mean(axis=0)
        return dist

    def copy(self) -> "ClassDistribution":
        return ClassDistribution(
            self.new_classes, dict(self.counts), {c: v.copy() for c, v in self.centroids.items()}
        )

    @property
    def mean(self) -> float:
        if not self.counts:
            return 0.0
        return sum(self.counts.values()) / len(self.counts)

    @property
    def minority(self) -> list[int]:
        m = self.mean
        return sorted(c for c, n in self.counts.items() if n < m)

    @property
    def majority(self) -> list[int]:
        m = self.mean
        return sorted(c for c, n in self.counts.items() if n >= m)

    def update(self, label: int, embedding) -> None:
        """Add one labeled sample in place (running-mean centroid update)."""
        label = int(label)
        if label not in self.new_classes:
            return
        e = np.asarray(embedding, dtype=np.float64)
        n = self.counts.get(label, 0) + 1
        self.counts[label] = n
        if n == 1:
            self.centroids[label] = e.copy()
        else:
            self.centroids[label] = self.centroids[label] + (e - self.centroids[label]) / n


def update_distribution(dist: ClassDistribution, label: int, embedding) -> ClassDistribution:
    """Functional form of :meth:`ClassDistribution.update`."""
    out = dist.copy()
    out.update(label, embedding)
    return out


def _min_centroid_distance(emb: np.ndarray, centroids: list[np.ndarray]) -> np.ndarray:
    return np.min(np.stack([distances_to(emb, mu) for mu in centroids]), axis=0)


def relative_minority_distances(embeddings: np.ndarray, dist: ClassDistribution) -> np.ndarray:
    """Distance to the nearest minority centroid minus distance to the nearest
    majority centroid, per row of ``embeddings``."""
    mnr, maj = dist.minority, dist.majority
    if not mnr or not maj:
        raise DegenerateDistributionError(
            f"need both minority and majority classes (got {len(mnr)} and {len(maj)})"
        )
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    return (_min_centroid_distance(emb, [dist.centroids[c] for c in mnr])
            - _min_centroid_distance(emb, [dist.centroids[c] for c in maj]))


def relative_minority_distance(features, dist: ClassDistribution, model: LearnerModel) -> float:
    return float(relative_minority_distances(embed(model, np.atleast_2d(features)), dist)[0])


def select_balanced_coreset(pool_ids, pool_features, labeled_features, k: int,
                            dist: ClassDistribution, model: LearnerModel,
                            label_fn: LabelFn,
                            fallback_log: list[bool] | None = None) -> list[int]:
    """Core-set restricted to candidates closer to a minority than to any
    majority centroid. ``dist`` is updated in place after every pick; when no
    candidate passes the filter the step uses plain core-set. ``fallback_log``
    receives one flag per pick (True = unfiltered step)."""
    ids, feats = _sorted_pool(pool_ids, pool_features)
    if len(ids) == 0:
        raise RequestError("empty pool")
    _check_k(k, len(ids))
    emb = embed(model, feats)
    labeled_features = np.asarray(labeled_features, dtype=np.float64)
    if len(labeled_features):
        min_dist = pairwise_distances(emb, embed(model, labeled_features)).min(axis=1)
    else:
        min_dist = np.full(len(ids), np.inf)
    available = np.ones(len(ids), dtype=bool)
    picked = []
    for _ in range(k):
        try:
            keep = available & (relative_minority_distances(emb, dist) < 0)
        except DegenerateDistributionError:
            keep = np.zeros_like(available)
        fallback = not keep.any()
        candidates = available if fallback else keep
        j = int(np.argmax(np.where(candidates, min_dist, -np.inf)))
        sid = int(ids[j])
        picked.append(sid)
        if fallback_log is not None:
            fallback_log.append(fallback)
        available[j] = False
        min_dist = np.minimum(min_dist, distances_to(emb, emb[j]))
        dist.update(label_fn(sid), emb[j])
    return picked


def choose_poorest(dist: ClassDistribution, rng: np.random.Generator) -> int:
    """Class with the fewest labels; ties resolved uniformly at random."""
    if not dist.counts:
        raise StateError("no labeled new class yet")
    low = min(dist.counts.values())
    tied = sorted(c for c, n in dist.counts.items() if n == low)
    if len(tied) == 1:
        return tied[0]
    return tied[int(rng.integers(len(tied)))]


def poorest_scores(emb: np.ndarray, dist: ClassDistribution, poor: int) -> np.ndarray:
    score = distances_to(emb, dist.centroids[poor])
    maj = dist.majority
    if maj:
        score = score - _min_centroid_distance(emb, [dist.centroids[c] for c in maj])
    return score


def select_poorest_first(pool_ids, pool_features, k: int, dist: ClassDistribution,
                         model: LearnerModel, label_fn: LabelFn, seed: int,
                         poor_log: list[int] | None = None) -> list[int]:
    """Each pick minimizes distance to the poorest class centroid minus distance
    to the nearest majority centroid. ``dist`` is updated in place after every
    pick; ``poor_log`` receives the targeted class per step."""
    ids, feats = _sorted_pool(pool_ids, pool_features)
    _check_k(k, len(ids))
    if not dist.counts:
        raise StateError("poorest-first needs at least one labeled new class")
    rng = derive_rng(seed, "poor")
    emb = embed(model, feats)
    available = np.ones(len(ids), dtype=bool)
    picked = []
    for _ in range(k):
        poor = choose_poorest(dist, rng)
        if poor_log is not None:
            poor_log.append(poor)
        score = np.where(available, poorest_scores(emb, dist, poor), np.inf)
        best = score.min()
        # the score is constant along hyperbola branches (a whole half-line in
        # 1-D), so near-equal values are ties and go to the lowest id
        j = int(np.flatnonzero(score <= best + TIE_TOL * max(1.0, abs(best)))[0])
        sid = int(ids[j])
        picked.append(sid)
        available[j] = False
        dist.update(label_fn(sid), emb[j])
    return picked
