"""Experiment loop: fully labeled initial state, then per-state active learning
(classical iteration + balancing iterations) with fine-tuning after every
iteration, calibrated evaluation and memory update at state end."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import acquisition as acq
from .config import ExperimentConfig, dump_config
from .data import (
    BudgetLedger,
    ClassIncrementalStream,
    GeneratorSpec,
    LabelingPool,
    Samples,
    generate_gaussian_stream,
    load_feature_dataset,
    quantize,
    split_budget,
)
from .errors import ConfigurationError
from .learner import (
    ClassPriorTable,
    LearnerModel,
    PlateauSchedule,
    calibrated_predict,
    embed,
    expand_head,
    init_model,
    predict,
    save_model,
    train,
)
from .memory import ExemplarMemory, update_memory
from .metrics import (
    ConfusionSummary,
    average_incremental_accuracy,
    coefficient_of_variation,
    mean_std,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class StateMetrics:
    state: int
    acc_top1: float
    acc_uncalibrated: float
    cv_labeled: float
    n_labeled: int
    labeled_per_class: dict[int, int] = field(default_factory=dict)
    iteration_sizes: list[int] = field(default_factory=list)


@dataclass
class RunReport:
    seed: int
    states: list[StateMetrics]
    average_incremental_accuracy: float
    mean_cv_labeled: float
    event_log: str | None = None
    wall_clock_seconds: float = 0.0

    @property
    def per_state_accuracy(self) -> list[float]:
        return [s.acc_top1 for s in self.states]

    def to_dict(self) -> dict:
        d = asdict(self)
        for s in d["states"]:
            s["labeled_per_class"] = {str(k): v for k, v in s["labeled_per_class"].items()}
        return d


@dataclass
class RunContext:
    """Everything one seeded run needs; the event list is append-only."""

    cfg: ExperimentConfig
    stream: ClassIncrementalStream
    seed: int
    memory_capacity: int
    events: list[dict] = field(default_factory=list)
    memory_snapshots: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# setup


def build_stream(cfg: ExperimentConfig, seed: int) -> ClassIncrementalStream:
    data_seed = cfg.data.seed if cfg.data.seed is not None else seed
    if cfg.data.source == "file":
        f = cfg.data.file
        return load_feature_dataset(f.path, cfg.states, data_seed, f.test_path, f.test_fraction)
    syn = cfg.data.synthetic
    extra = dict(
        class_center_scale=syn.class_center_scale,
        class_spread=syn.class_spread,
        test_per_class=syn.test_per_class,
    )
    if syn.samples_per_class is not None:
        spec = GeneratorSpec(syn.num_classes, syn.dim, tuple(syn.samples_per_class), seed=data_seed, **extra)
    else:
        spec = GeneratorSpec.with_target_cv(
            syn.num_classes, syn.mean_per_class, syn.target_cv,
            dim=syn.dim, min_per_class=syn.min_per_class, seed=data_seed, **extra,
        )
    return generate_gaussian_stream(spec, cfg.states)


def memory_capacity(cfg: ExperimentConfig, stream: ClassIncrementalStream) -> int:
    if cfg.memory_capacity is not None:
        return cfg.memory_capacity
    total = sum(len(s) for s in stream.train)
    return int(round(cfg.memory_fraction * total))


def make_context(cfg: ExperimentConfig, seed: int, stream: ClassIncrementalStream | None = None) -> RunContext:
    stream = stream if stream is not None else build_stream(cfg, seed)
    return RunContext(cfg, stream, seed, memory_capacity(cfg, stream))


def evaluate(model: LearnerModel, test: Samples, priors: ClassPriorTable) -> tuple[float, float]:
    """(calibrated, uncalibrated) top-1 accuracy."""
    if len(test) == 0:
        return 0.0, 0.0
    _, pred = calibrated_predict(model, priors, test.features)
    raw = predict(model, test.features)
    return (ConfusionSummary.from_predictions(test.labels, pred).accuracy,
            ConfusionSummary.from_predictions(test.labels, raw).accuracy)


def _labeled_cv(labels, classes) -> tuple[float, dict[int, int]]:
    labels = np.asarray(labels, dtype=np.int64)
    counts = {int(c): int((labels == c).sum()) for c in classes}
    if sum(counts.values()) == 0:
        return 0.0, counts
    return coefficient_of_variation(list(counts.values())), counts


def _snapshot(ctx: RunContext, t: int, memory: ExemplarMemory) -> None:
    ctx.memory_snapshots.append({"state": t, "memory": memory.snapshot()})


# ---------------------------------------------------------------------------
# states


def run_initial_state(ctx: RunContext) -> tuple[LearnerModel, ExemplarMemory, StateMetrics]:
    """Train M_0 on all state-0 data and fill memory by herding."""
    cfg, stream = ctx.cfg, ctx.stream
    data = stream.train[0]
    if len(data) == 0:
        raise ConfigurationError("state 0 has no samples")
    model = init_model(cfg.learner.kind, stream.dim, stream.classes_up_to(0),
                       cfg.learner.hidden_dim, derive_seed(ctx.seed, "model"), cfg.learner.init_scale)
    model = train(model, data.features, data.labels,
                  cfg.initial_train.to_train_config(derive_seed(ctx.seed, "train", 0)))
    memory = update_memory(ExemplarMemory(ctx.memory_capacity), data, model, cfg.normalize_embeddings)
    _snapshot(ctx, 0, memory)
    priors = ClassPriorTable.from_labels(data.labels, model.num_classes)
    acc, raw = evaluate(model, stream.cumulative_test(0), priors)
    cv, counts = _labeled_cv(data.labels, stream.classes_per_state[0])
    return model, memory, StateMetrics(0, acc, raw, cv, len(data), counts, [len(data)])


def _af_for_iteration(cfg: ExperimentConfig, i: int) -> str:
    if i == 0:
        return cfg.plan.classical_af
    if cfg.plan.balancing_af == "same":
        return cfg.plan.classical_af
    return cfg.plan.balancing_af


def acquire(af: str, k: int, pool: LabelingPool, model: LearnerModel, reference: np.ndarray,
            new_classes: list[int], past_classes: int, label_fn: Callable[[int], int],
            seed: int, margin_mode: str) -> list[int]:
    """Label ``k`` samples from ``pool`` with acquisition function ``af``."""
    ids, feats = pool.unlabeled()
    if af == "rand":
        picked = acq.select_random(ids, k, seed)
        for sid in picked:
            label_fn(sid)
        return picked

    labeled = pool.labeled()
    detected = list(range(past_classes)) + sorted(set(labeled.labels.tolist()))
    if af in ("ent", "marg"):
        if af == "ent":
            picked = acq.select_entropy(ids, feats, k, model, detected)
        else:
            picked = acq.select_margin(ids, feats, k, model, margin_mode, detected)
        for sid in picked:
            label_fn(sid)
        return picked

    ref = reference if len(labeled) == 0 else np.concatenate([reference, labeled.features])
    if af == "core":
        if len(ref) == 0:
            # cold start: one random seed sample gives core-set its reference
            first = acq.select_random(ids, 1, seed)
            label_fn(first[0])
            if k == 1:
                return first
            ids, feats = pool.unlabeled()
            picked = acq.select_coreset(ids, feats, pool.labeled().features, k - 1, model)
            for sid in picked:
                label_fn(sid)
            return first + picked
        picked = acq.select_coreset(ids, feats, ref, k, model)
        for sid in picked:
            label_fn(sid)
        return picked

    dist = acq.ClassDistribution.from_labeled(new_classes, labeled.labels, embed(model, labeled.features)
                                              if len(labeled) else np.empty((0, model.embedding_dim)))
    if af == "b-core":
        return acq.select_balanced_coreset(ids, feats, ref, k, dist, model, label_fn)
    if af == "poor":
        return acq.select_poorest_first(ids, feats, k, dist, model, label_fn, seed)
    raise ConfigurationError(f"unknown acquisition function {af!r}")


def run_incremental_state(ctx: RunContext, t: int, model: LearnerModel,
                          memory: ExemplarMemory) -> tuple[LearnerModel, ExemplarMemory, StateMetrics]:
    """Iterative active learning for state ``t`` (t >= 1)."""
    cfg, stream = ctx.cfg, ctx.stream
    if t < 1:
        raise ConfigurationError("incremental states start at t=1")
    data = stream.train[t]
    total = quantize(len(data), cfg.budget)
    iterations = cfg.plan.iterations
    if total < iterations:
        raise ConfigurationError(
            f"state {t}: budget of {total} labels cannot cover {iterations} iterations"
        )
    sizes = split_budget(total, cfg.plan.budget_fractions)
    pool = LabelingPool(data, BudgetLedger(total))
    new_classes = list(stream.classes_per_state[t])
    past = stream.classes_up_to(t - 1)
    n_t = stream.classes_up_to(t)
    mem = memory.samples()
    schedule = PlateauSchedule.from_config(cfg.finetune_train.to_train_config(0))

    current = model
    done_sizes = []
    for i, size in enumerate(sizes):
        af = _af_for_iteration(cfg, i)
        k = min(size, pool.num_unlabeled)
        if k < size:
            log.warning("state %d iteration %d: pool exhausted (%d < %d)", t, i + 1, k, size)
        if k == 0:
            break

        def label_fn(sid: int, _af=af, _i=i) -> int:
            lab = pool.reveal(sid)
            ctx.events.append({
                "state": t, "iteration": _i + 1, "af": _af, "sample_id": int(sid),
                "revealed_label": int(lab), "remaining_budget": pool.budget.remaining,
            })
            return lab

        mem_ref = mem.features
        acquire(af, k, pool, current, mem_ref, new_classes, past, label_fn,
                derive_seed(ctx.seed, "acq", t, i), cfg.plan.margin_mode)
        done_sizes.append(k)
        if current.num_classes < n_t:
            current = expand_head(current, n_t, cfg.learner.init_scale)
        train_set = Samples.concat([pool.labeled(), mem], dim=stream.dim)
        tcfg = cfg.finetune_train.to_train_config(derive_seed(ctx.seed, "finetune", t, i))
        current = train(current, train_set.features, train_set.labels, tcfg, schedule)

    labeled = pool.labeled()
    train_set = Samples.concat([labeled, mem], dim=stream.dim)
    priors = ClassPriorTable.from_labels(train_set.labels, n_t)
    acc, raw = evaluate(current, stream.cumulative_test(t), priors)
    new_memory = update_memory(memory, labeled, current, cfg.normalize_embeddings)
    _snapshot(ctx, t, new_memory)
    cv, counts = _labeled_cv(labeled.labels, new_classes)
    return current, new_memory, StateMetrics(t, acc, raw, cv, len(labeled), counts, done_sizes)


def _finalize(ctx: RunContext, states: list[StateMetrics], started: float) -> RunReport:
    accs = [s.acc_top1 for s in states]
    cvs = [s.cv_labeled for s in states[1:]]
    return RunReport(
        seed=ctx.seed,
        states=states,
        average_incremental_accuracy=average_incremental_accuracy(accs),
        mean_cv_labeled=float(np.mean(cvs)) if cvs else 0.0,
        wall_clock_seconds=time.perf_counter() - started,
    )


def run_single(ctx: RunContext) -> tuple[RunReport, LearnerModel]:
    started = time.perf_counter()
    model, memory, m0 = run_initial_state(ctx)
    states = [m0]
    for t in range(1, ctx.stream.num_states):
        model, memory, m = run_incremental_state(ctx, t, model, memory)
        states.append(m)
    return _finalize(ctx, states, started), model


def run_supervised_upper_bound_single(ctx: RunContext) -> RunReport:
    """sIL: every streamed sample labeled, one fine-tune per state covering the
    same number of epochs as all AL iterations together."""
    cfg, stream = ctx.cfg, ctx.stream
    started = time.perf_counter()
    model, memory, m0 = run_initial_state(ctx)
    states = [m0]
    epochs = cfg.finetune_train.epochs * cfg.plan.iterations
    for t in range(1, stream.num_states):
        data = stream.train[t]
        n_t = stream.classes_up_to(t)
        model = expand_head(model, n_t, cfg.learner.init_scale)
        train_set = Samples.concat([data, memory.samples()], dim=stream.dim)
        tcfg = cfg.finetune_train.to_train_config(derive_seed(ctx.seed, "finetune", t, 0), epochs)
        model = train(model, train_set.features, train_set.labels, tcfg)
        priors = ClassPriorTable.from_labels(train_set.labels, n_t)
        acc, raw = evaluate(model, stream.cumulative_test(t), priors)
        memory = update_memory(memory, data, model, cfg.normalize_embeddings)
        _snapshot(ctx, t, memory)
        cv, counts = _labeled_cv(data.labels, stream.classes_per_state[t])
        states.append(StateMetrics(t, acc, raw, cv, len(data), counts, [len(data)]))
    return _finalize(ctx, states, started)


def run_joint_upper_bound_single(ctx: RunContext) -> RunReport:
    """noIL: one model trained on every state's data at once, then scored on the
    cumulative test set of each state."""
    cfg, stream = ctx.cfg, ctx.stream
    started = time.perf_counter()
    data = Samples.concat(stream.train, dim=stream.dim)
    model = init_model(cfg.learner.kind, stream.dim, stream.total_classes,
                       cfg.learner.hidden_dim, derive_seed(ctx.seed, "model"), cfg.learner.init_scale)
    model = train(model, data.features, data.labels,
                  cfg.initial_train.to_train_config(derive_seed(ctx.seed, "train", 0)))
    priors = ClassPriorTable.from_labels(data.labels, model.num_classes)
    states = []
    for t in range(stream.num_states):
        acc, raw = evaluate(model, stream.cumulative_test(t), priors)
        part = stream.train[t]
        cv, counts = _labeled_cv(part.labels, stream.classes_per_state[t])
        states.append(StateMetrics(t, acc, raw, cv, len(part), counts, [len(part)]))
    return _finalize(ctx, states, started)


# ---------------------------------------------------------------------------
# experiments and run directories


MODES = {"al": None, "sil": run_supervised_upper_bound_single, "noil": run_joint_upper_bound_single}


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_run_dir(run_dir: Path, ctx: RunContext, report: RunReport, model: LearnerModel | None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    rows = ["state,acc_top1,cv_labeled,n_labeled"]
    for s in report.states:
        rows.append(f"{s.state},{s.acc_top1:.10g},{s.cv_labeled:.10g},{s.n_labeled}")
    _write_atomic(run_dir / "metrics.csv", "\n".join(rows) + "\n")
    _write_atomic(run_dir / "events.jsonl",
                  "".join(json.dumps(e, sort_keys=True) + "\n" for e in ctx.events))
    mem_dir = run_dir / "memory"
    mem_dir.mkdir(exist_ok=True)
    for snap in ctx.memory_snapshots:
        _write_atomic(mem_dir / f"state_{snap['state']}.json", json.dumps(snap["memory"], indent=1) + "\n")
    if model is not None:
        save_model(model, run_dir / "model_final.npz")


def execute_run(cfg: ExperimentConfig, seed: int, mode: str = "al",
                out_dir: str | Path | None = None) -> RunReport:
    """One seeded run; writes ``run_<seed>/`` under ``out_dir`` when given."""
    ctx = make_context(cfg, seed)
    model = None
    if mode == "al":
        report, model = run_single(ctx)
    else:
        report = MODES[mode](ctx)
    if out_dir is not None:
        rel = f"run_{seed}"
        report.event_log = f"{rel}/events.jsonl"
        write_run_dir(Path(out_dir) / rel, ctx, report, model if cfg.save_models else None)
    return report


def _execute_run_args(args):
    return execute_run(*args)


def aggregate(cfg: ExperimentConfig, reports: list[RunReport], mode: str = "al") -> dict:
    accs = [r.average_incremental_accuracy for r in reports]
    cvs = [r.mean_cv_labeled for r in reports]
    acc_mean, acc_std = mean_std(accs, cfg.std_mode)
    cv_mean, cv_std = mean_std(cvs, cfg.std_mode)
    return {
        "mode": mode,
        "classical_af": cfg.plan.classical_af,
        "balancing_af": cfg.plan.balancing_af,
        "budget": cfg.budget,
        "std_mode": cfg.std_mode,
        "average_incremental_accuracy": {"mean": acc_mean, "std": acc_std, "per_run": accs},
        "mean_cv_labeled": {"mean": cv_mean, "std": cv_std, "per_run": cvs},
        "runs": [r.to_dict() for r in reports],
        "config": cfg.model_dump(mode="json"),
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1,
                   mode: str = "al") -> dict:
    """Run every seed of ``cfg`` and aggregate mean +- std across runs.

    Runs are isolated and may execute in a process pool; results are ordered by
    seed so the summary does not depend on ``jobs``.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_atomic(Path(out_dir) / "config.yaml", dump_config(cfg))
    args = [(cfg, seed, mode, out_dir) for seed in cfg.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            reports = list(pool.map(_execute_run_args, args))
    else:
        reports = [execute_run(*a) for a in args]
    summary = aggregate(cfg, reports, mode)
    if out_dir is not None:
        write_summary(Path(out_dir) / "summary.json", strip_wall_clock(summary))
        timings = {str(r.seed): r.wall_clock_seconds for r in reports}
        _write_atomic(Path(out_dir) / "timings.json", json.dumps(timings, indent=2) + "\n")
    return summary


def run_supervised_upper_bound(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    return run_experiment(cfg, out_dir, jobs, mode="sil")


def run_joint_upper_bound(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    return run_experiment(cfg, out_dir, jobs, mode="noil")


def write_summary(path: Path, summary: dict) -> None:
    _write_atomic(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")


def strip_wall_clock(summary: dict) -> dict:
    """Copy of a summary without timing fields (for reproducibility checks)."""
    out = json.loads(json.dumps(summary))
    for run in out.get("runs", []):
        run.pop("wall_clock_seconds", None)
    return out


def default_out_root() -> Path:
    return Path(os.environ.get("ACTIVEIL_OUT", "runs"))
