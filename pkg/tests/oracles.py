"""Brute-force reference implementations used as independent oracles.

Pure Python: every step recomputes distances, counts and centroids from
scratch instead of maintaining running state.
"""
from __future__ import annotations

import math

import numpy as np

from activeil.seeding import derive_rng


def _vec(v):
    return [float(x) for x in v]


def coreset_oracle(pool: dict[int, list[float]], labeled: list[list[float]], k: int) -> list[int]:
    refs = [_vec(v) for v in labeled]
    remaining = sorted(pool)
    picked = []
    for _ in range(k):
        best_id, best = None, -math.inf
        for sid in remaining:
            d = min(math.dist(pool[sid], r) for r in refs)
            if d > best:
                best_id, best = sid, d
        picked.append(best_id)
        refs.append(pool[best_id])
        remaining.remove(best_id)
    return picked


def _split(labeled: list[tuple[int, list[float]]], new_classes):
    counts, sums = {}, {}
    for lab, v in labeled:
        if lab not in new_classes:
            continue
        counts[lab] = counts.get(lab, 0) + 1
        sums.setdefault(lab, [0.0] * len(v))
        sums[lab] = [a + b for a, b in zip(sums[lab], v)]
    cents = {c: [s / counts[c] for s in sums[c]] for c in counts}
    if not counts:
        return counts, cents, [], []
    mean = sum(counts.values()) / len(counts)
    mnr = sorted(c for c in counts if counts[c] < mean)
    maj = sorted(c for c in counts if counts[c] >= mean)
    return counts, cents, mnr, maj


def balanced_coreset_oracle(pool, reference, labeled, labels, new_classes, k):
    """``labeled``: (label, embedding) pairs of this state's labeled samples;
    ``reference``: embeddings used by the core-set distance (memory + labeled);
    ``labels``: hidden labels of pool ids."""
    labeled = [(lab, _vec(v)) for lab, v in labeled]
    refs = [_vec(v) for v in reference]
    remaining = sorted(pool)
    picked, fallbacks = [], []
    for _ in range(k):
        _, cents, mnr, maj = _split(labeled, new_classes)
        candidates = []
        if mnr and maj:
            for sid in remaining:
                rel = (min(math.dist(pool[sid], cents[c]) for c in mnr)
                       - min(math.dist(pool[sid], cents[c]) for c in maj))
                if rel < 0:
                    candidates.append(sid)
        fallback = not candidates
        if fallback:
            candidates = list(remaining)
        best_id, best = None, -math.inf
        for sid in candidates:
            d = min(math.dist(pool[sid], r) for r in refs) if refs else math.inf
            if d > best:
                best_id, best = sid, d
        picked.append(best_id)
        fallbacks.append(fallback)
        refs.append(pool[best_id])
        labeled.append((labels[best_id], pool[best_id]))
        remaining.remove(best_id)
    return picked, fallbacks


def poorest_oracle(pool, labeled, labels, new_classes, k, seed):
    rng = derive_rng(seed, "poor")
    labeled = [(lab, _vec(v)) for lab, v in labeled]
    remaining = sorted(pool)
    picked = []
    for _ in range(k):
        counts, cents, mnr, maj = _split(labeled, new_classes)
        low = min(counts.values())
        tied = sorted(c for c in counts if counts[c] == low)
        poor = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
        scores = {}
        for sid in remaining:
            s = math.dist(pool[sid], cents[poor])
            if maj:
                s -= min(math.dist(pool[sid], cents[c]) for c in maj)
            scores[sid] = s
        best = min(scores.values())
        best_id = min(sid for sid, s in scores.items() if s <= best + 1e-9 * max(1.0, abs(best)))
        picked.append(best_id)
        labeled.append((labels[best_id], pool[best_id]))
        remaining.remove(best_id)
    return picked


def herding_oracle(items: dict[int, list[float]]) -> list[int]:
    ids = sorted(items)
    d = len(items[ids[0]])
    mu = [sum(items[i][j] for i in ids) / len(ids) for j in range(d)]
    chosen: list[int] = []
    for m in range(1, len(ids) + 1):
        gaps = {}
        for sid in ids:
            if sid in chosen:
                continue
            total = [items[sid][j] + sum(items[c][j] for c in chosen) for j in range(d)]
            gaps[sid] = math.dist(mu, [t / m for t in total])
        best = min(gaps.values())
        chosen.append(min(sid for sid, g in gaps.items() if g <= best + 1e-9 * max(1.0, abs(best))))
    return chosen


def random_instance(rng: np.random.Generator, max_pool: int = 100, max_dim: int = 8):
    """Clustered points so balancing filters are exercised, not degenerate."""
    d = int(rng.integers(1, max_dim + 1))
    n_cls = int(rng.integers(2, 5))
    centers = rng.normal(0, 3, size=(n_cls, d))
    n_pool = int(rng.integers(5, max_pool + 1))
    n_lab = int(rng.integers(n_cls, 3 * n_cls + 4))
    y_pool = rng.integers(0, n_cls, size=n_pool)
    y_lab = np.concatenate([np.arange(n_cls), rng.integers(0, n_cls, size=n_lab - n_cls)])
    if rng.random() < 0.5:
        # skewed labeled counts
        y_lab = np.concatenate([y_lab, np.zeros(int(rng.integers(1, 6)), dtype=np.int64)])
    x_pool = centers[y_pool] + rng.normal(size=(n_pool, d))
    x_lab = centers[y_lab] + rng.normal(size=(len(y_lab), d))
    ids = rng.permutation(10 * n_pool)[:n_pool]
    return {
        "d": d, "classes": list(range(n_cls)),
        "ids": ids, "x_pool": x_pool, "y_pool": y_pool,
        "x_lab": x_lab, "y_lab": y_lab,
        "k": int(rng.integers(1, min(n_pool, 25) + 1)),
    }
