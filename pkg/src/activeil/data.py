"""Synthetic and file-based class-incremental streams, oracle and labeling pools.

Class ids are always renumbered so that state ``t`` owns a contiguous block of
ids following those of state ``t-1``; a model head of size ``N_t`` therefore
covers exactly the classes seen up to state ``t``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BudgetError,
    ConfigurationError,
    InfeasibleError,
    LookupFailure,
    ParseError,
    ValidationError,
)
from .metrics import coefficient_of_variation
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Samples:
    """A batch of samples stored column-wise."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D array")
        if not (len(ids) == len(feats) == len(labels)):
            raise ValidationError("ids, features and labels differ in length")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def take(self, index) -> "Samples":
        return Samples(self.ids[index], self.features[index], self.labels[index])

    def select_ids(self, ids: Sequence[int]) -> "Samples":
        pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            idx = [pos[int(i)] for i in ids]
        except KeyError as exc:
            raise LookupFailure(f"unknown sample id {exc.args[0]}") from None
        return self.take(np.asarray(idx, dtype=np.int64))

    @staticmethod
    def concat(parts: Sequence["Samples"], dim: int | None = None) -> "Samples":
        parts = [p for p in parts if len(p)]
        if not parts:
            d = 0 if dim is None else dim
            return Samples(np.empty(0, np.int64), np.empty((0, d)), np.empty(0, np.int64))
        return Samples(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass(frozen=True)
class ClassIncrementalStream:
    train: list[Samples]
    test: list[Samples]
    classes_per_state: list[list[int]]
    # new id -> id in the source (file labels); identity for synthetic data
    label_map: dict[int, int] = field(default_factory=dict)

    @property
    def num_states(self) -> int:
        return len(self.train)

    @property
    def total_classes(self) -> int:
        return sum(len(c) for c in self.classes_per_state)

    @property
    def dim(self) -> int:
        return self.train[0].dim

    def classes_up_to(self, t: int) -> int:
        """N_t: number of classes seen in states 0..t."""
        return sum(len(c) for c in self.classes_per_state[: t + 1])

    def cumulative_test(self, t: int) -> Samples:
        return Samples.concat(self.test[: t + 1], dim=self.dim)


# ---------------------------------------------------------------------------
# imbalance generation


def _profile_counts(n: int, floor: int, excess: int, a: float) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)
    w = np.exp(a * (u - 1.0))
    return floor + excess * w / w.sum()


def _integerize(real: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(real).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(real - base), kind="stable")
        base[order[:short]] += 1
    return base


def make_imbalanced_counts(
    num_classes: int,
    mean: float,
    target_cv: float,
    min_per_class: int = 25,
    seed: int = 0,
) -> list[int]:
    """Per-class sample counts with a given mean and coefficient of variation.

    Counts follow an exponential profile ``floor + E * exp(a (u - 1))`` whose
    steepness ``a`` is found by bisection, are rounded with the largest-remainder
    rule (the total is ``round(num_classes * mean)``), nudged one unit at a time
    until the cv is within 0.005 of the target, then shuffled by ``seed``.

    Raises:
        InfeasibleError: the target cv needs counts below ``min_per_class``.
    """
    if num_classes < 1:
        raise ValidationError("num_classes must be >= 1")
    if not (math.isfinite(mean) and math.isfinite(target_cv)):
        raise ValidationError("mean and target_cv must be finite")
    if target_cv < 0:
        raise ValidationError("target_cv must be >= 0")
    if min_per_class < 1:
        raise ValidationError("min_per_class must be >= 1")
    if mean < min_per_class:
        raise ValidationError("mean must be >= min_per_class")

    n = num_classes
    total = int(round(n * mean))
    if total < n * min_per_class:
        total = n * min_per_class
    excess = total - n * min_per_class
    if target_cv == 0:
        counts = np.full(n, total // n, dtype=np.int64)
        counts[: total - counts.sum()] += 1
        return [int(c) for c in counts]

    extreme = np.full(n, min_per_class, dtype=np.int64)
    extreme[-1] += excess
    cv_max = coefficient_of_variation(extreme)
    if target_cv > cv_max + 1e-12:
        raise InfeasibleError(
            f"cv {target_cv} unreachable with {n} classes, mean {mean} and "
            f"at least {min_per_class} per class (max {cv_max:.4f})"
        )

    lo, hi = 0.0, 1.0
    while coefficient_of_variation(_profile_counts(n, min_per_class, excess, hi)) < target_cv:
        hi *= 2.0
        if hi > 1e6:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if coefficient_of_variation(_profile_counts(n, min_per_class, excess, mid)) < target_cv:
            lo = mid
        else:
            hi = mid
    counts = _integerize(_profile_counts(n, min_per_class, excess, 0.5 * (lo + hi)), total)

    for _ in range(10 * total):
        cv = coefficient_of_variation(counts)
        if abs(cv - target_cv) <= 0.005:
            break
        if cv < target_cv:
            donors = np.flatnonzero(counts > min_per_class)
            src = donors[np.argmin(counts[donors])]
            dst = int(np.argmax(counts))
        else:
            src = int(np.argmax(counts))
            dst = int(np.argmin(counts))
        if src == dst:
            break
        counts[src] -= 1
        counts[dst] += 1

    rng = derive_rng(seed, "counts")
    return [int(c) for c in rng.permutation(counts)]


@dataclass(frozen=True)
class GeneratorSpec:
    """Isotropic Gaussian classes with seed-deterministic centers."""

    num_classes: int
    dim: int
    samples_per_class: tuple[int, ...]
    class_center_scale: float = 1.0
    class_spread: float = 1.0
    seed: int = 0
    test_per_class: int = 50

    def __post_init__(self):
        object.__setattr__(self, "samples_per_class", tuple(int(c) for c in self.samples_per_class))
        if self.num_classes < 1 or self.dim < 1:
            raise ValidationError("num_classes and dim must be >= 1")
        if len(self.samples_per_class) != self.num_classes:
            raise ValidationError("samples_per_class length must equal num_classes")
        if min(self.samples_per_class) < 1:
            raise ValidationError("every class needs at least one sample")
        for name in ("class_center_scale", "class_spread"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative")
        if self.test_per_class < 0:
            raise ValidationError("test_per_class must be >= 0")

    @classmethod
    def with_target_cv(
        cls,
        num_classes: int,
        mean: float,
        target_cv: float,
        *,
        dim: int = 16,
        min_per_class: int = 25,
        seed: int = 0,
        **kwargs,
    ) -> "GeneratorSpec":
        counts = make_imbalanced_counts(num_classes, mean, target_cv, min_per_class, seed)
        return cls(num_classes=num_classes, dim=dim, samples_per_class=tuple(counts), seed=seed, **kwargs)

    @property
    def cv(self) -> float:
        return coefficient_of_variation(self.samples_per_class)


def split_classes(num_classes: int, num_states: int) -> list[int]:
    """Classes per state; the remainder goes to the first state."""
    if num_states < 1:
        raise ConfigurationError("num_states must be >= 1")
    if num_classes < num_states:
        raise ConfigurationError(
            f"cannot split {num_classes} classes into {num_states} states"
        )
    base, extra = divmod(num_classes, num_states)
    return [base + extra] + [base] * (num_states - 1)


def generate_gaussian_stream(spec: GeneratorSpec, num_states: int) -> ClassIncrementalStream:
    sizes = split_classes(spec.num_classes, num_states)
    centers = derive_rng(spec.seed, "centers").normal(
        0.0, spec.class_center_scale, size=(spec.num_classes, spec.dim)
    )
    n_train = sum(spec.samples_per_class)
    train_parts, test_parts = [], []
    next_test_id = n_train
    next_id = 0
    for j, count in enumerate(spec.samples_per_class):
        rng = derive_rng(spec.seed, "class", j)
        x = centers[j] + spec.class_spread * rng.standard_normal((count, spec.dim))
        train_parts.append(Samples(np.arange(next_id, next_id + count), x, np.full(count, j)))
        next_id += count
        xt = centers[j] + spec.class_spread * rng.standard_normal((spec.test_per_class, spec.dim))
        test_parts.append(
            Samples(np.arange(next_test_id, next_test_id + spec.test_per_class), xt,
                    np.full(spec.test_per_class, j))
        )
        next_test_id += spec.test_per_class

    classes_per_state, train, test = [], [], []
    start = 0
    for size in sizes:
        cls_ids = list(range(start, start + size))
        classes_per_state.append(cls_ids)
        train.append(Samples.concat([train_parts[j] for j in cls_ids], dim=spec.dim))
        test.append(Samples.concat([test_parts[j] for j in cls_ids], dim=spec.dim))
        start += size
    return ClassIncrementalStream(
        train, test, classes_per_state, {j: j for j in range(spec.num_classes)}
    )


# ---------------------------------------------------------------------------
# CSV interchange


def read_feature_csv(path: str | Path) -> Samples:
    """Parse ``id,label,f0,...,f{d-1}`` rows; errors carry the line number."""
    ids, labels, rows = [], [], []
    seen: set[int] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        d = len(header) - 2
        expected = ["id", "label"] + [f"f{i}" for i in range(d)]
        if d < 1 or header != expected:
            raise ParseError(f"unknown header {','.join(header)!r}", line=1)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, got {len(row)}", line=lineno)
            try:
                sid, lab = int(row[0]), int(row[1])
                feats = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if sid < 0 or lab < 0:
                raise ParseError("ids and labels must be non-negative", line=lineno)
            if sid in seen:
                raise ParseError(f"duplicate id {sid}", line=lineno)
            if not all(math.isfinite(v) for v in feats):
                raise ParseError("non-finite feature value", line=lineno)
            seen.add(sid)
            ids.append(sid)
            labels.append(lab)
            rows.append(feats)
    feats = np.asarray(rows, dtype=np.float64).reshape(len(rows), d)
    return Samples(np.asarray(ids, np.int64), feats, np.asarray(labels, np.int64))


def write_feature_csv(samples: Samples, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{i}" for i in range(samples.dim)])
        for sid, lab, x in zip(samples.ids, samples.labels, samples.features):
            w.writerow([int(sid), int(lab)] + [repr(float(v)) for v in x])
    tmp.replace(path)


def _stratified_split(samples: Samples, test_fraction: float, seed: int) -> tuple[Samples, Samples]:
    rng = derive_rng(seed, "split")
    train_idx, test_idx = [], []
    for c in samples.classes:
        idx = np.flatnonzero(samples.labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        if len(idx) > 1:
            n_test = min(max(n_test, 1), len(idx) - 1)
        else:
            n_test = 0
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return samples.take(np.sort(train_idx)), samples.take(np.sort(np.asarray(test_idx, np.int64)))


def load_feature_dataset(
    path: str | Path,
    num_states: int,
    seed: int,
    test_path: str | Path | None = None,
    test_fraction: float = 0.2,
) -> ClassIncrementalStream:
    """Load a CSV feature dataset and split its classes into ``num_states`` states.

    Source classes are shuffled by ``seed``, grouped contiguously and renumbered
    in state order. Without ``test_path`` a stratified split holds out
    ``test_fraction`` of each class.
    """
    data = read_feature_csv(path)
    if test_path is not None:
        test = read_feature_csv(test_path)
        if test.dim != data.dim:
            raise ParseError(f"test file has dimension {test.dim}, expected {data.dim}")
        if set(test.ids.tolist()) & set(data.ids.tolist()):
            raise ParseError("test file reuses training ids")
        unknown = set(test.classes) - set(data.classes)
        if unknown:
            raise ParseError(f"test file has classes absent from training: {sorted(unknown)}")
        train = data
    else:
        train, test = _stratified_split(data, test_fraction, seed)

    source_classes = np.asarray(data.classes)
    if len(source_classes) < num_states:
        raise ConfigurationError(
            f"{len(source_classes)} classes cannot be split into {num_states} states"
        )
    order = source_classes[derive_rng(seed, "class-order").permutation(len(source_classes))]
    to_new = {int(c): k for k, c in enumerate(order)}
    label_map = {k: int(c) for k, c in enumerate(order)}

    def renumber(s: Samples) -> Samples:
        return Samples(s.ids, s.features, np.array([to_new[int(c)] for c in s.labels], np.int64))

    train, test = renumber(train), renumber(test)
    sizes = split_classes(len(order), num_states)
    classes_per_state, tr_states, te_states = [], [], []
    start = 0
    for size in sizes:
        block = list(range(start, start + size))
        classes_per_state.append(block)
        tr_states.append(train.take(np.flatnonzero(np.isin(train.labels, block))))
        te_states.append(test.take(np.flatnonzero(np.isin(test.labels, block))))
        start += size
    return ClassIncrementalStream(tr_states, te_states, classes_per_state, label_map)


def export_stream(stream: ClassIncrementalStream, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``train.csv`` and ``test.csv`` in the ingest format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = Samples.concat(stream.train, dim=stream.dim)
    test = Samples.concat(stream.test, dim=stream.dim)
    write_feature_csv(train, out / "train.csv")
    write_feature_csv(test, out / "test.csv")
    return out / "train.csv", out / "test.csv"


# ---------------------------------------------------------------------------
# oracle and labeling


def quantize(total: int, fraction: float) -> int:
    """floor(fraction * total) computed in decimal so 0.29 * 100 gives 29."""
    return int(math.floor(Decimal(str(fraction)) * total))


def split_budget(total: int, fractions: Sequence[float]) -> list[int]:
    """Per-iteration label counts; the rounding remainder goes to the last one."""
    parts = [quantize(total, f) for f in fractions]
    parts[-1] += total - sum(parts)
    return parts


@dataclass
class BudgetLedger:
    total: int
    remaining: int = -1

    def __post_init__(self):
        if self.total < 0:
            raise ValidationError("budget must be non-negative")
        if self.remaining < 0:
            self.remaining = self.total

    @property
    def spent(self) -> int:
        return self.total - self.remaining


class Oracle:
    """Reveals true labels, one budget unit per call."""

    def __init__(self, samples: Samples):
        self._labels = {int(i): int(c) for i, c in zip(samples.ids, samples.labels)}

    def label(self, sample_id: int, budget: BudgetLedger) -> int:
        if budget.remaining < 1:
            raise BudgetError("labeling budget exhausted")
        try:
            lab = self._labels[int(sample_id)]
        except KeyError:
            raise LookupFailure(f"unknown sample id {sample_id}") from None
        budget.remaining -= 1
        return lab


def oracle_label(oracle: Oracle, sample_id: int, budget: BudgetLedger) -> int:
    return oracle.label(sample_id, budget)


class LabelingPool:
    """Labeled/unlabeled partition of one state's streamed samples."""

    def __init__(self, samples: Samples, budget: BudgetLedger):
        self.samples = samples
        self.budget = budget
        self._oracle = Oracle(samples)
        self._row = {int(i): k for k, i in enumerate(samples.ids)}
        self._unlabeled = np.ones(len(samples), dtype=bool)
        self.labeled_ids: list[int] = []
        self.revealed: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_unlabeled(self) -> int:
        return int(self._unlabeled.sum())

    def unlabeled(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, features) of unlabeled samples in ascending id order."""
        idx = np.flatnonzero(self._unlabeled)
        idx = idx[np.argsort(self.samples.ids[idx], kind="stable")]
        return self.samples.ids[idx], self.samples.features[idx]

    def reveal(self, sample_id: int) -> int:
        sid = int(sample_id)
        row = self._row.get(sid)
        if row is None:
            raise LookupFailure(f"unknown sample id {sid}")
        if not self._unlabeled[row]:
            raise ValidationError(f"sample {sid} is already labeled")
        label = self._oracle.label(sid, self.budget)
        self._unlabeled[row] = False
        self.labeled_ids.append(sid)
        self.revealed[sid] = label
        return label

    def labeled(self) -> Samples:
        """Labeled samples in labeling order, carrying their revealed labels."""
        rows = [self._row[i] for i in self.labeled_ids]
        idx = np.asarray(rows, dtype=np.int64)
        return Samples(
            self.samples.ids[idx],
            self.samples.features[idx].reshape(len(idx), self.samples.dim),
            np.asarray([self.revealed[i] for i in self.labeled_ids], dtype=np.int64),
        )
