"""Experiment configuration: schema, YAML loading, overrides and diagnostics."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from .errors import ConfigurationError
from .learner import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSource(_Strict):
    num_classes: int = Field(20, ge=1)
    dim: int = Field(16, ge=1)
    mean_per_class: float = Field(100.0, gt=0)
    target_cv: float = Field(0.75, ge=0)
    min_per_class: int = Field(25, ge=1)
    # explicit counts bypass cv targeting
    samples_per_class: Optional[list[int]] = None
    test_per_class: int = Field(50, ge=0)
    class_center_scale: float = Field(1.0, ge=0)
    class_spread: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _counts_match(self):
        if self.samples_per_class is not None and len(self.samples_per_class) != self.num_classes:
            raise ValueError("samples_per_class length must equal num_classes")
        return self


class FileSource(_Strict):
    path: str
    test_path: Optional[str] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)


class DataSection(_Strict):
    source: Literal["synthetic", "file"]
    synthetic: SyntheticSource = SyntheticSource()
    file: Optional[FileSource] = None
    # pin the stream across runs; None draws a fresh stream from each run seed
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _file_present(self):
        if self.source == "file" and self.file is None:
            raise ValueError("data.file is required when data.source is 'file'")
        return self


class PlanSection(_Strict):
    classical_af: Literal["rand", "core", "ent", "marg"] = "rand"
    balancing_af: Literal["rand", "poor", "b-core", "same"] = "poor"
    budget_fractions: list[float] = [0.4, 0.2, 0.2, 0.2]
    margin_mode: Literal["standard", "paper_literal"] = "standard"

    @model_validator(mode="after")
    def _fractions(self):
        f = self.budget_fractions
        if not f or any(x <= 0 for x in f):
            raise ValueError("budget_fractions must be non-empty and positive")
        if abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"budget_fractions must sum to 1 (got {sum(f)})")
        return self

    @property
    def iterations(self) -> int:
        return len(self.budget_fractions)


class LearnerSection(_Strict):
    kind: Literal["linear_softmax", "one_hidden_mlp"] = "linear_softmax"
    hidden_dim: int = Field(32, ge=1)
    init_scale: float = Field(0.01, ge=0)


class TrainSection(_Strict):
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0005, ge=0)
    lr_plateau_patience: int = Field(10, ge=0)
    lr_decay_factor: float = Field(0.1, gt=0, le=1)

    def to_train_config(self, seed: int, epochs: int | None = None) -> TrainConfig:
        values = self.model_dump()
        if epochs is not None:
            values["epochs"] = epochs
        return TrainConfig(seed=seed, **values)


class ExperimentConfig(_Strict):
    data: DataSection
    states: int = Field(5, ge=2)
    budget: float = Field(0.10, gt=0, le=1)
    # None: memory_fraction of the total training size
    memory_capacity: Optional[int] = Field(None, ge=0)
    memory_fraction: float = Field(0.02, ge=0, le=1)
    normalize_embeddings: bool = False
    plan: PlanSection = PlanSection()
    learner: LearnerSection = LearnerSection()
    initial_train: TrainSection = TrainSection(epochs=50, batch_size=128, lr_plateau_patience=15)
    finetune_train: TrainSection = TrainSection()
    num_runs: int = Field(5, ge=1)
    base_seed: int = Field(0, ge=0)
    std_mode: Literal["sample", "population"] = "sample"
    save_models: bool = False

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.num_runs)]

    def with_overrides(self, **dotted: Any) -> "ExperimentConfig":
        data = self.model_dump(mode="json")
        for key, value in dotted.items():
            set_dotted(data, key, value)
        return parse_config(data)


DEFAULT_CONFIG_TEXT = """\
# Default desk-scale benchmark: 20 Gaussian classes in 16-D over 5 states,
# mean 100 training samples per class with cv 0.75, 10% labeling budget.
data:
  source: synthetic
  synthetic:
    num_classes: 20
    dim: 16
    mean_per_class: 100
    target_cv: 0.75
    min_per_class: 25
    test_per_class: 50
    class_center_scale: 1.0
    class_spread: 1.0
states: 5
budget: 0.10
memory_fraction: 0.02
plan:
  classical_af: rand
  balancing_af: poor
  budget_fractions: [0.4, 0.2, 0.2, 0.2]
  margin_mode: standard
learner:
  kind: linear_softmax
  hidden_dim: 32
initial_train:
  epochs: 50
  batch_size: 128
  lr: 0.1
  momentum: 0.9
  weight_decay: 0.0005
  lr_plateau_patience: 15
  lr_decay_factor: 0.1
finetune_train:
  epochs: 20
  batch_size: 32
  lr: 0.1
  momentum: 0.9
  weight_decay: 0.0005
  lr_plateau_patience: 10
  lr_decay_factor: 0.1
num_runs: 5
base_seed: 0
std_mode: sample
"""


class ConfigError(ConfigurationError):
    """Config rejected; ``problems`` lists (field path, line or None, message)."""

    def __init__(self, problems: list[tuple[str, int | None, str]]):
        self.problems = problems
        lines = []
        for loc, line, msg in problems:
            where = f"{loc} (line {line})" if line is not None else loc
            lines.append(f"{where}: {msg}")
        super().__init__("invalid config:\n  " + "\n  ".join(lines))


def _key_line(node: yaml.Node | None, loc: tuple) -> int | None:
    """1-based line of the deepest YAML node matching the pydantic error path."""
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(part):
                    line = k.start_mark.line + 1
                    node = v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def parse_config(data: Any, text: str | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError([("<root>", 1 if text else None, "config must be a mapping")])
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as exc:
        root = yaml.compose(text) if text else None
        problems = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"])
            problems.append((".".join(str(p) for p in loc) or "<root>", _key_line(root, loc), err["msg"]))
        raise ConfigError(problems) from None


def coerce_value(raw: str) -> Any:
    """Interpret an override value with YAML scalar rules (ints, floats, lists...)."""
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = {}
            node[p] = nxt
        if not isinstance(nxt, dict):
            raise ConfigError([(key, None, f"{p!r} is not a section")])
        node = nxt
    node[parts[-1]] = value


def parse_overrides(items: list[str] | None) -> dict[str, Any]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError([(item, None, "override must look like key=value")])
        key, raw = item.split("=", 1)
        out[key.strip()] = coerce_value(raw)
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load YAML (or the bundled default) and apply dotted-key overrides."""
    text = DEFAULT_CONFIG_TEXT if path is None else Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError([("<yaml>", mark.line + 1 if mark else None, str(exc).splitlines()[0])]) from None
    if data is None:
        data = {}
    if overrides:
        if not isinstance(data, dict):
            raise ConfigError([("<root>", 1, "config must be a mapping")])
        data = copy.deepcopy(data)
        for key, value in overrides.items():
            set_dotted(data, key, value)
    return parse_config(data, text)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
