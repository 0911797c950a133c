"""Experiment configuration: pydantic schema plus a YAML loader with line numbers.

Config format version 1 is a YAML (or JSON) mapping::

    version: 1
    seed: 0
    seeds: 3
    rounds: 60
    task: {num_classes: 8, input_dim: 16, samples_per_class: 300, class_separation: 1.8}
    partition: {num_servers: 4, clients_per_server: 5, alpha_server: 0.1, alpha_client: 0.5}
    learner: {hidden_dims: [64]}
    sgd: {lr_init: 0.01, local_epochs: 5, batch_size: 32}
    methods:
      - {name: fedbac}
      - {name: ifca, k_max: 2}
      - {name: hierfavg}
    metrics: {targets: [0.5, 0.6, 0.7], fairness_window: 10}
    output_dir: results

Omitted keys take the defaults below. ``k_max`` / ``participation`` left unset
resolve per method (Fed-BAC: M and 0.8, IFCA: 5 and 1.0, HierFAVG: 1 and 1.0).
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data import PartitionConfig
from .errors import ConfigError
from .model import LearnerConfig, SgdHyperparams
from .orchestrator import Method, MethodConfig

CONFIG_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TaskSpec(_Strict):
    num_classes: int = Field(8, ge=2)
    input_dim: int = Field(16, ge=2)
    samples_per_class: int = Field(300, ge=1)
    class_separation: float = Field(1.8, ge=0)


class PartitionSpec(_Strict):
    num_servers: int = Field(4, ge=1)
    clients_per_server: int = Field(5, ge=1)
    alpha_server: float = Field(0.1, gt=0)
    alpha_client: float = Field(0.5, gt=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)

    def build(self) -> PartitionConfig:
        return PartitionConfig(**self.model_dump())


class LearnerSpec(_Strict):
    hidden_dims: list[int] = Field(default_factory=lambda: [64])
    activation: Literal["relu"] = "relu"

    @field_validator("hidden_dims")
    @classmethod
    def _positive(cls, v: list[int]) -> list[int]:
        if any(h < 1 for h in v):
            raise ValueError("hidden widths must be >= 1")
        return v


class SgdSpec(_Strict):
    lr_init: float = Field(0.01, ge=0)
    lr_decay: float = Field(0.995, gt=0, le=1)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    clip_norm: float = Field(1.0, gt=0)
    local_epochs: int = Field(5, ge=1)
    cluster_l2: float = Field(1e-3, ge=0)
    batch_size: int = Field(32, ge=1)

    def build(self) -> SgdHyperparams:
        return SgdHyperparams(**self.model_dump())


class MethodSpec(_Strict):
    name: Method
    k_max: int | None = Field(None, ge=1)
    participation: float | None = Field(None, gt=0, le=1)
    reassign_period: int = Field(20, ge=1)
    ts_warmup: int = Field(10, ge=0)
    ifca_threshold: float = Field(0.95, ge=0)
    init_assignment: Literal["round_robin", "uniform"] = "round_robin"
    alpha_ucb: float = Field(0.3, ge=0)
    epsilon: float = Field(1e-8, gt=0)
    additive: bool = False
    width_factor: int = Field(1, ge=1)

    @property
    def label(self) -> str:
        return self.name.value

    def resolve(self, num_servers: int) -> MethodConfig:
        base = MethodConfig.defaults(self.name, num_servers)
        fields = self.model_dump(exclude={"name"})
        fields["k_max"] = base.k_max if self.k_max is None else self.k_max
        fields["participation"] = base.participation if self.participation is None else self.participation
        cfg = MethodConfig(method=self.name, **fields)
        cfg.validate_for(num_servers)
        return cfg


def _default_methods() -> list[MethodSpec]:
    return [MethodSpec(name=Method.FEDBAC)]


class MetricsSpec(_Strict):
    targets: list[float] = Field(default_factory=lambda: [0.5, 0.6, 0.7])
    fairness_window: int = Field(10, ge=1)
    bytes_per_param: int = Field(4, ge=1)


class ExperimentConfig(_Strict):
    version: Literal[1] = CONFIG_VERSION
    seed: int = Field(0, ge=0)
    seeds: int = Field(1, ge=1)
    rounds: int = Field(60, ge=1)
    task: TaskSpec = Field(default_factory=TaskSpec)
    partition: PartitionSpec = Field(default_factory=PartitionSpec)
    learner: LearnerSpec = Field(default_factory=LearnerSpec)
    sgd: SgdSpec = Field(default_factory=SgdSpec)
    methods: list[MethodSpec] = Field(default_factory=_default_methods, min_length=1)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)
    output_dir: str = "results"

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(
            input_dim=self.task.input_dim,
            hidden_dims=tuple(self.learner.hidden_dims),
            num_classes=self.task.num_classes,
            activation=self.learner.activation,
        )

    def resolved_methods(self) -> list[MethodConfig]:
        """Method configs with per-method defaults filled; raises ConfigError."""
        try:
            return [m.resolve(self.partition.num_servers) for m in self.methods]
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def seed_list(self) -> list[int]:
        return [self.seed + i for i in range(self.seeds)]


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def _line_index(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict:
    """Map key paths (tuples of str/int) to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            sub = path + (key.value,)
            out[sub] = key.start_mark.line + 1
            _line_index(value, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_index(item, path + (i,), out)
    return out


def _nearest_line(lines: dict, loc: tuple) -> int:
    loc = tuple(loc)
    while loc and loc not in lines:
        loc = loc[:-1]
    return lines.get(loc, 1)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate; every problem is reported as ``source:line: message``."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{source}:{line}: YAML syntax error: {problem}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    lines = _line_index(node) if node is not None else {}
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = err["loc"]
            where = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"{source}:{_nearest_line(lines, loc)}: {where}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc
    try:
        cfg.resolved_methods()
    except ConfigError as exc:
        raise ConfigError(f"{source}:{lines.get(('methods',), 1)}: methods: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


def with_overrides(cfg: ExperimentConfig, **updates: Any) -> ExperimentConfig:
    """Copy with top-level fields replaced, re-validated."""
    data = cfg.model_dump(mode="json")
    data.update({k: v for k, v in updates.items() if v is not None})
    return ExperimentConfig.model_validate(data)
