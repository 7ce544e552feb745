"""Bounded exemplar memory of past classes, filled by herding."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Samples
from .errors import RequestError, ValidationError
from .acquisition import TIE_TOL
from .learner import LearnerModel, embed

log = logging.getLogger(__name__)


def herding_order_from_embeddings(ids, embeddings) -> list[int]:
    """Greedy ordering whose running mean tracks the class mean.

    Step m picks the remaining x minimizing ``||mu - (e(x) + S) / m||`` where S
    sums the embeddings already picked; ties go to the lowest id.
    """
    ids = np.asarray(ids, dtype=np.int64)
    emb = np.asarray(embeddings, dtype=np.float64)
    if len(ids) == 0:
        raise RequestError("herding needs at least one sample")
    order = np.argsort(ids, kind="stable")
    ids, emb = ids[order], emb[order]
    mu = emb.mean(axis=0)
    running = np.zeros_like(mu)
    available = np.ones(len(ids), dtype=bool)
    out = []
    for m in range(1, len(ids) + 1):
        diff = mu - (emb + running) / m
        gap = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        gap = np.where(available, gap, np.inf)
        best = gap.min()
        # near-ties resolve to the lowest id (ids are sorted)
        j = int(np.flatnonzero(gap <= best + TIE_TOL * max(1.0, abs(best)))[0])
        out.append(int(ids[j]))
        available[j] = False
        running = running + emb[j]
    return out


def herding_order(class_samples: Samples, model: LearnerModel, normalize: bool = False) -> list[int]:
    emb = embed(model, class_samples.features)
    if normalize:
        emb = l2_normalize(emb)
    return herding_order_from_embeddings(class_samples.ids, emb)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def class_quotas(capacity: int, classes) -> dict[int, int]:
    """floor(K / N) per class, plus one for the first K mod N classes by id."""
    classes = sorted(int(c) for c in classes)
    if not classes:
        return {}
    q, extra = divmod(capacity, len(classes))
    return {c: q + (1 if i < extra else 0) for i, c in enumerate(classes)}


@dataclass
class ExemplarMemory:
    """Exemplar ids per class in herding order, with their features."""

    capacity: int
    per_class: dict[int, list[int]] = field(default_factory=dict)
    features: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 0:
            raise ValidationError("memory capacity must be non-negative")

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    @property
    def classes(self) -> list[int]:
        return sorted(self.per_class)

    def samples(self) -> Samples:
        ids, labels = [], []
        for c in self.classes:
            ids.extend(self.per_class[c])
            labels.extend([c] * len(self.per_class[c]))
        if not ids:
            dim = next(iter(self.features.values())).shape[0] if self.features else 0
            return Samples(np.empty(0, np.int64), np.empty((0, dim)), np.empty(0, np.int64))
        feats = np.stack([self.features[i] for i in ids])
        return Samples(np.asarray(ids), feats, np.asarray(labels))

    def snapshot(self) -> dict[str, list[int]]:
        return {str(c): list(self.per_class[c]) for c in self.classes}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.snapshot(), indent=1) + "\n", encoding="utf-8")
        tmp.replace(path)


def update_memory(memory: ExemplarMemory, new_class_data: Samples, model: LearnerModel,
                  normalize_embeddings: bool = False) -> ExemplarMemory:
    """Insert herding exemplars of new classes and shrink past classes to quota.

    Past classes keep a prefix of their stored order. With fewer slots than
    classes the lowest class ids keep one exemplar each and the rest are dropped.
    """
    new_classes = new_class_data.classes
    overlap = set(new_classes) & set(memory.per_class)
    if overlap:
        raise ValidationError(f"classes already in memory: {sorted(overlap)}")
    all_classes = sorted(set(memory.per_class) | set(new_classes))
    if memory.capacity < len(all_classes):
        log.warning("memory capacity %d below class count %d; dropping classes",
                    memory.capacity, len(all_classes))
    quotas = class_quotas(memory.capacity, all_classes)

    per_class: dict[int, list[int]] = {}
    for c in memory.classes:
        per_class[c] = memory.per_class[c][: quotas[c]]
    for c in new_classes:
        part = new_class_data.take(np.flatnonzero(new_class_data.labels == c))
        order = herding_order(part, model, normalize_embeddings)
        per_class[c] = order[: quotas[c]]
    per_class = {c: v for c, v in per_class.items() if v}

    row = {int(i): k for k, i in enumerate(new_class_data.ids)}
    features: dict[int, np.ndarray] = {}
    for c, ids in per_class.items():
        for i in ids:
            features[i] = memory.features[i] if i in memory.features else new_class_data.features[row[i]]
    return ExemplarMemory(memory.capacity, per_class, features)
