"""Softmax-regression and one-hidden-layer classifiers trained with SGD.

Both kinds expose ``embed`` (identity or hidden ReLU activations) and
``predict_proba``. ``calibrated_predict`` rescales probabilities by inverse
class frequency in the training set (threshold moving).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TrainingError, ValidationError
from .seeding import derive_rng

KINDS = ("linear_softmax", "one_hidden_mlp")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LearnerModel:
    kind: str
    input_dim: int
    hidden_dim: int
    num_classes: int
    params: dict[str, np.ndarray]
    rng_seed: int = 0

    @property
    def embedding_dim(self) -> int:
        return self.hidden_dim if self.kind == "one_hidden_mlp" else self.input_dim

    def copy(self) -> "LearnerModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_plateau_patience: int = 10
    lr_decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValidationError("lr_decay_factor must lie in (0, 1]")
        if self.lr_plateau_patience < 0:
            raise ValidationError("lr_plateau_patience must be non-negative")


@dataclass
class PlateauSchedule:
    """Divide the learning rate when the epoch loss stops improving.

    An epoch improves when its loss is below ``best * (1 - 1e-4)``; after more
    than ``patience`` epochs without improvement the rate is multiplied by
    ``factor``. One schedule may be shared by several ``train`` calls.
    """

    lr: float
    patience: int
    factor: float
    best: float = math.inf
    bad_epochs: int = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "PlateauSchedule":
        return cls(cfg.lr, cfg.lr_plateau_patience, cfg.lr_decay_factor)

    def step(self, loss: float) -> None:
        if loss < self.best * (1.0 - 1e-4):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0


@dataclass(frozen=True)
class ClassPriorTable:
    """Training-set class counts; a zero marks a class with no training data."""

    counts: tuple[int, ...]
    total: int = field(default=-1)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValidationError("class counts must be non-negative")
        if self.total == -1:
            object.__setattr__(self, "total", sum(counts))
        elif self.total != sum(counts):
            raise ValidationError("total must equal the sum of class counts")

    @classmethod
    def from_labels(cls, labels, num_classes: int) -> "ClassPriorTable":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValidationError("label outside the class range")
        return cls(tuple(np.bincount(labels, minlength=num_classes).tolist()))


# ---------------------------------------------------------------------------
# construction


def init_model(
    kind: str,
    input_dim: int,
    num_classes: int,
    hidden_dim: int = 32,
    seed: int = 0,
    init_scale: float = 0.01,
) -> LearnerModel:
    if kind not in KINDS:
        raise ValidationError(f"unknown learner kind {kind!r}")
    if input_dim < 1 or num_classes < 1:
        raise ValidationError("input_dim and num_classes must be >= 1")
    rng = derive_rng(seed, "init")
    params: dict[str, np.ndarray] = {}
    if kind == "one_hidden_mlp":
        if hidden_dim < 1:
            raise ValidationError("hidden_dim must be >= 1 for the MLP")
        params["W1"] = rng.standard_normal((input_dim, hidden_dim)) * math.sqrt(2.0 / input_dim)
        params["b1"] = np.zeros(hidden_dim)
        head_in = hidden_dim
    else:
        hidden_dim = 0
        head_in = input_dim
    params["W"] = rng.standard_normal((head_in, num_classes)) * init_scale
    params["b"] = np.zeros(num_classes)
    return LearnerModel(kind, input_dim, hidden_dim, num_classes, params, seed)


def expand_head(model: LearnerModel, new_num_classes: int, init_scale: float = 0.01) -> LearnerModel:
    """Grow the output layer; existing class weights are kept bit-for-bit."""
    if new_num_classes <= model.num_classes:
        raise ValidationError(
            f"cannot shrink or keep head size ({model.num_classes} -> {new_num_classes})"
        )
    extra = new_num_classes - model.num_classes
    rng = derive_rng(model.rng_seed, "expand", new_num_classes)
    params = {k: v.copy() for k, v in model.params.items()}
    new_w = rng.standard_normal((params["W"].shape[0], extra)) * init_scale
    params["W"] = np.concatenate([params["W"], new_w], axis=1)
    params["b"] = np.concatenate([params["b"], np.zeros(extra)])
    return replace(model, num_classes=new_num_classes, params=params)


# ---------------------------------------------------------------------------
# inference


def _as_batch(model: LearnerModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValidationError(
            f"expected feature dimension {model.input_dim}, got shape {x.shape}"
        )
    return x, single


def _hidden(params, x):
    z = x @ params["W1"] + params["b1"]
    return z, np.maximum(z, 0.0)


def _logits(model: LearnerModel, x: np.ndarray) -> np.ndarray:
    h = _hidden(model.params, x)[1] if model.kind == "one_hidden_mlp" else x
    return h @ model.params["W"] + model.params["b"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def embed(model: LearnerModel, x) -> np.ndarray:
    """Feature vector for one sample or a batch (rows)."""
    xb, single = _as_batch(model, x)
    out = _hidden(model.params, xb)[1] if model.kind == "one_hidden_mlp" else xb.copy()
    return out[0] if single else out


def predict_proba(model: LearnerModel, x) -> np.ndarray:
    xb, single = _as_batch(model, x)
    p = softmax(_logits(model, xb))
    return p[0] if single else p


def calibrated_predict(model: LearnerModel, priors: ClassPriorTable, x) -> tuple[np.ndarray, np.ndarray]:
    """Rectified scores ``p_j * total / count_j`` and their argmax.

    Classes whose prior count is zero score 0. Ties go to the lowest class id.
    """
    if len(priors.counts) < model.num_classes:
        raise ValidationError(
            f"priors cover {len(priors.counts)} classes, model has {model.num_classes}"
        )
    counts = np.asarray(priors.counts[: model.num_classes], dtype=np.float64)
    if not np.any(counts > 0):
        raise ValidationError("priors contain no trained class")
    p = predict_proba(model, x)
    scale = np.divide(priors.total, counts, out=np.zeros_like(counts), where=counts > 0)
    scores = p * scale
    pred = np.argmax(scores, axis=-1)
    return scores, pred


def predict(model: LearnerModel, x) -> np.ndarray:
    return np.argmax(predict_proba(model, x), axis=-1)


# ---------------------------------------------------------------------------
# training


def _check_labels(model: LearnerModel, labels: np.ndarray) -> None:
    if labels.size == 0:
        raise ValidationError("training data is empty")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValidationError(
            f"labels must lie in [0, {model.num_classes}); got max {labels.max()}"
        )


def loss_and_grads(model: LearnerModel, x: np.ndarray, y: np.ndarray, params=None):
    """Mean cross-entropy and its gradient for every parameter array."""
    params = model.params if params is None else params
    n = len(y)
    if model.kind == "one_hidden_mlp":
        z1, h = _hidden(params, x)
    else:
        h = x
    logits = h @ params["W"] + params["b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))

    d_logits = np.exp(shifted - log_norm[:, None])
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    grads = {"W": h.T @ d_logits, "b": d_logits.sum(axis=0)}
    if model.kind == "one_hidden_mlp":
        dz = (d_logits @ params["W"].T) * (z1 > 0)
        grads["W1"] = x.T @ dz
        grads["b1"] = dz.sum(axis=0)
    return loss, grads


def mean_loss(model: LearnerModel, x, y) -> float:
    return loss_and_grads(model, np.asarray(x, float), np.asarray(y, np.int64))[0]


def train(
    model: LearnerModel,
    features,
    labels,
    cfg: TrainConfig,
    schedule: PlateauSchedule | None = None,
    history: list[float] | None = None,
) -> LearnerModel:
    """Minibatch SGD with momentum and L2 weight decay on the cross-entropy.

    Returns the parameters with the lowest full-training-set loss seen at the
    end of any epoch (the starting point included), so the loss never rises.
    ``schedule`` carries the learning-rate state across calls.

    Raises:
        ValidationError: empty data or labels outside the head.
        TrainingError: the loss became non-finite.
    """
    x, _ = _as_batch(model, features)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) != len(x):
        raise ValidationError("features and labels differ in length")
    _check_labels(model, y)
    if schedule is None:
        schedule = PlateauSchedule.from_config(cfg)

    params = {k: v.copy() for k, v in model.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = derive_rng(cfg.seed, "shuffle")
    best_loss = loss_and_grads(model, x, y, params)[0]
    if not math.isfinite(best_loss):
        raise TrainingError("initial loss is not finite", epoch=0)
    best = {k: v.copy() for k, v in params.items()}
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        lr = schedule.lr
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = loss_and_grads(model, x[idx], y[idx], params)
            for k in params:
                g = grads[k] + cfg.weight_decay * params[k]
                velocity[k] = cfg.momentum * velocity[k] + g
                params[k] -= lr * velocity[k]
        epoch_loss = loss_and_grads(model, x, y, params)[0]
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingError("loss diverged", epoch=epoch)
        if history is not None:
            history.append(epoch_loss)
        schedule.step(epoch_loss)
        if epoch_loss <= best_loss:
            best_loss = epoch_loss
            best = {k: v.copy() for k, v in params.items()}
    return replace(model, params=best)


def gradient_check(model: LearnerModel, features, labels, epsilon: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients."""
    x, _ = _as_batch(model, features)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) > 32:
        raise ValidationError("gradient_check takes at most 32 samples")
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValidationError("epsilon must lie in [1e-7, 1e-3]")
    _check_labels(model, y)
    params = {k: v.copy() for k, v in model.params.items()}
    _, analytic = loss_and_grads(model, x, y, params)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_and_grads(model, x, y, params)[0]
            flat[i] = orig - epsilon
            down = loss_and_grads(model, x, y, params)[0]
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(grad[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: LearnerModel, path: str | Path) -> None:
    meta = {
        "format": "activeil-model",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "num_classes": model.num_classes,
        "rng_seed": model.rng_seed,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)),
                 **{f"param_{k}": v for k, v in model.params.items()})
    tmp.replace(path)


def load_model(path: str | Path) -> LearnerModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != "activeil-model" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        params = {k[len("param_"):]: z[k].copy() for k in z.files if k.startswith("param_")}
    return LearnerModel(
        meta["kind"], meta["input_dim"], meta["hidden_dim"], meta["num_classes"], params, meta["rng_seed"]
    )


def predict_labels(model: LearnerModel, x, priors: ClassPriorTable | None = None) -> np.ndarray:
    """Argmax class per row, calibrated when ``priors`` are given."""
    if priors is None:
        return predict(model, x)
    return calibrated_predict(model, priors, x)[1]


def restrict_probs(p: np.ndarray, classes: Sequence[int] | None) -> np.ndarray:
    """Probabilities over ``classes`` only, renormalized per row."""
    if classes is None:
        return p
    cols = np.asarray(sorted(set(int(c) for c in classes if 0 <= c < p.shape[-1])), dtype=np.int64)
    if cols.size == 0:
        raise ValidationError("no detected class is covered by the model")
    q = p[..., cols]
    total = q.sum(axis=-1, keepdims=True)
    uniform = np.full_like(q, 1.0 / cols.size)
    return np.divide(q, total, out=uniform, where=total > 0)
