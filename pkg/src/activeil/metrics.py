"""Reported statistics: accuracy, average incremental accuracy, cv, balance traces."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, RequestError, ValidationError


def coefficient_of_variation(counts: Sequence[float]) -> float:
    """Population standard deviation divided by the mean.

    Raises:
        ValidationError: empty input, negative entries or zero mean.
    """
    arr = np.asarray(counts, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cv of an empty sequence is undefined")
    if np.any(arr < 0):
        raise ValidationError("counts must be non-negative")
    mean = float(arr.mean())
    if mean <= 0.0:
        raise ValidationError("cv is undefined for a zero mean")
    return float(arr.std() / mean)


def average_incremental_accuracy(per_state_acc: Sequence[float]) -> float:
    """Mean accuracy over states 1..T-1; the initial state is excluded."""
    if len(per_state_acc) < 2:
        raise RequestError("need at least one incremental state (T >= 2)")
    incremental = per_state_acc[1:]
    return math.fsum(incremental) / len(incremental)


def mean_std(values: Sequence[float], mode: str = "sample") -> tuple[float, float]:
    """Mean and standard deviation across runs.

    ``mode="sample"`` divides by n-1 (0.0 for a single value), ``"population"`` by n.
    """
    if mode not in ("sample", "population"):
        raise ValidationError(f"unknown std mode {mode!r}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("no values")
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    ddof = 1 if mode == "sample" else 0
    return mean, float(arr.std(ddof=ddof))


@dataclass(frozen=True)
class ConfusionSummary:
    classes: tuple[int, ...]
    correct: tuple[int, ...]
    total: tuple[int, ...]

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionSummary":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValidationError("prediction and label arrays differ in shape")
        classes = np.unique(y_true)
        hit = y_true == y_pred
        correct = tuple(int(hit[y_true == c].sum()) for c in classes)
        total = tuple(int((y_true == c).sum()) for c in classes)
        return cls(tuple(int(c) for c in classes), correct, total)

    @property
    def accuracy(self) -> float:
        n = sum(self.total)
        return sum(self.correct) / n if n else 0.0

    @property
    def recall(self) -> dict[int, float]:
        return {c: k / n for c, k, n in zip(self.classes, self.correct, self.total)}


def balance_trace(
    events: Iterable[dict] | str | Path,
    state_classes: Mapping[int, Sequence[int]] | None = None,
) -> list[float]:
    """cv of labeled-per-class counts after every labeling event.

    Counts restart at each new state. When ``state_classes`` maps a state to its
    new classes, unlabeled classes count as zeros; otherwise only classes revealed
    so far in that state are considered. Accepts parsed event dicts or a
    JSON-lines file path.
    """
    if isinstance(events, (str, Path)):
        events = read_event_log(events)
    series: list[float] = []
    counts: dict[int, int] = {}
    current_state = None
    for i, ev in enumerate(events):
        try:
            state = int(ev["state"])
            label = int(ev["revealed_label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed event: {exc}", line=i + 1) from None
        if state != current_state:
            current_state = state
            known = state_classes.get(state, ()) if state_classes else ()
            counts = {int(c): 0 for c in known}
        counts[label] = counts.get(label, 0) + 1
        series.append(coefficient_of_variation(list(counts.values())))
    return series


def read_event_log(path: str | Path) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
    return events
