"""Experiment configuration.

All knobs live in one flat namespace.  Values are resolved with increasing
precedence: built-in defaults, an INI-style config file (``key = value``
lines under any ``[section]`` header), ``CASCL_<KEY>`` environment
variables, then command-line flags ``--<kebab-key>``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .augment import STRATEGIES, AugRwrParams, AugSimParams
from .encoder import ModelConfig, NodeFeatureSpec
from .errors import ConfigError
from .ingest import DatasetConfig, SyntheticParams
from .train import (
    OUTBREAK,
    POPULARITY,
    AugmentSettings,
    ContrastiveParams,
    DistillParams,
    FinetuneParams,
)

ENV_PREFIX = "CASCL_"
PHASES = ("pretrain", "finetune", "distill", "eval")


def _opt(section: str, default, help: str = ""):
    return field(default=default, metadata={"section": section, "help": help})


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    dataset: str = _opt("data", "synthetic", "cascade file path, or 'synthetic'")
    pretrain_datasets: str = _opt("data", "", "comma-separated extra pre-training sources")
    t_o: float = _opt("data", 1.0, "observation horizon")
    t_p: float = _opt("data", 24.0, "prediction horizon")
    min_observed_nodes: int = _opt("data", 10)
    max_observed_nodes: int = _opt("data", 100)
    dataset_end_time: float = _opt("data", 0.0, "0 = infer from the data")
    data_seed: int = _opt("data", 0, "seed for splits, label subsets and synthesis")
    label_fraction: float = _opt("data", 1.0)
    # synthetic generator
    n_cascades: int = _opt("synthetic", 2000)
    branching_mean: float = _opt("synthetic", 100.0)
    time_rate: float = _opt("synthetic", 0.3)
    rate_spread: float = _opt("synthetic", 0.5)
    max_size: int = _opt("synthetic", 1000)
    size_tail: float = _opt("synthetic", 2.0)
    # augmentation
    strategy: str = _opt("augment", "augsim", "augsim | augrwr | augsim+augrwr")
    eta: float = _opt("augment", 0.1, "augmentation strength")
    theta_t: float = _opt("augment", 0.5)
    strength_mode: str = _opt("augment", "absolute", "absolute | per_node")
    restart_prob: float = _opt("augment", 0.2)
    walk_budget_factor: float = _opt("augment", 3.0)
    # model
    feature_mode: str = _opt("model", "structural", "structural | wavelet")
    wavelet_scale: float = _opt("model", 1.0)
    wavelet_samples: int = _opt("model", 4)
    wavelet_t_max: float = _opt("model", 10.0)
    embedding_dim: int = _opt("model", 64)
    model_size: float = _opt("model", 4.0, "width multiplier over base_width")
    base_width: int = _opt("model", 32)
    head_depth: int = _opt("model", 4)
    finetune_layer: int = _opt("model", -1, "-1 = pick from label fraction")
    downstream_width: int = _opt("model", 0, "0 = hidden width / 2")
    # contrastive pre-training
    batch_size: int = _opt("contrastive", 64)
    temperature: float = _opt("contrastive", 0.1)
    pretrain_epochs: int = _opt("contrastive", 30)
    pretrain_unlabeled: bool = _opt("contrastive", True)
    # fine-tuning
    task: str = _opt("finetune", POPULARITY, "popularity | outbreak")
    learning_rate: float = _opt("finetune", 5e-4)
    patience: int = _opt("finetune", 20)
    finetune_epochs: int = _opt("finetune", 100)
    finetune_batch_size: int = _opt("finetune", 64)
    freeze: bool = _opt("finetune", False)
    # distillation
    distill_epochs: int = _opt("distill", 100)
    student_pool: str = _opt("distill", "label+unlabel", "label | unlabel | label+unlabel")
    student_width: float = _opt("distill", 1.0, "1.0 = self-distillation")
    distill_augment: bool = _opt("distill", True)
    # experiment
    seeds: str = _opt("experiment", "0", "comma-separated model seeds")
    phases: str = _opt("experiment", "pretrain,finetune,distill,eval")
    out_dir: str = _opt("experiment", "runs/default")

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.task not in (POPULARITY, OUTBREAK):
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.seed_list:
            raise ConfigError("at least one seed is required")
        bad = set(self.phase_list) - set(PHASES)
        if bad:
            raise ConfigError(f"unknown phases {sorted(bad)}")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError("label_fraction must lie in (0, 1]")

    # -- derived views -------------------------------------------------------

    @property
    def seed_list(self) -> list[int]:
        try:
            return [int(s) for s in str(self.seeds).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad seeds {self.seeds!r}") from None

    @property
    def phase_list(self) -> list[str]:
        return [p.strip() for p in self.phases.split(",") if p.strip()]

    @property
    def hidden_dim(self) -> int:
        return max(2, 2 * int(round(self.model_size * self.base_width / 2)))

    @property
    def resolved_finetune_layer(self) -> int:
        if self.finetune_layer >= 0:
            return self.finetune_layer
        if self.head_depth == 4:
            # tuned head designs per label fraction: 100% -> 4-1, 10% -> 4-4, 1% -> 4-3
            if self.label_fraction >= 0.5:
                return 1
            return 4 if self.label_fraction >= 0.05 else 3
        return self.head_depth

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(
            t_o=self.t_o, t_p=self.t_p,
            min_observed_nodes=self.min_observed_nodes,
            max_observed_nodes=self.max_observed_nodes,
            dataset_end_time=self.dataset_end_time or None,
            seed=self.data_seed,
        )

    def synthetic_params(self) -> SyntheticParams:
        return SyntheticParams(self.branching_mean, self.time_rate, self.rate_spread,
                               self.max_size, self.size_tail)

    def feature_spec(self) -> NodeFeatureSpec:
        return NodeFeatureSpec(self.feature_mode, self.t_o, self.wavelet_scale,
                               self.wavelet_samples, self.wavelet_t_max)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            features=self.feature_spec(),
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            head_depth=self.head_depth,
            finetune_layer=self.resolved_finetune_layer,
            downstream_width=self.downstream_width or None,
        )

    def augment_settings(self, lam: float) -> AugmentSettings:
        return AugmentSettings(
            self.strategy,
            AugSimParams(self.eta, self.theta_t, lam, self.strength_mode),
            AugRwrParams(self.restart_prob, self.walk_budget_factor),
            self.t_o,
        )

    def contrastive_params(self) -> ContrastiveParams:
        return ContrastiveParams(self.batch_size, self.temperature, self.pretrain_epochs,
                                 self.patience, self.learning_rate, self.pretrain_unlabeled)

    def finetune_params(self) -> FinetuneParams:
        return FinetuneParams(self.finetune_epochs, self.patience, self.finetune_batch_size,
                              self.learning_rate, self.freeze, self.task)

    def distill_params(self) -> DistillParams:
        return DistillParams(self.distill_epochs, self.patience, self.finetune_batch_size,
                             self.learning_rate, self.student_pool, self.student_width,
                             self.distill_augment)

    # -- serialization -------------------------------------------------------

    def to_ini(self) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            sections.setdefault(f.metadata["section"], []).append(f"{f.name} = {value}")
        return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: Any):
    kind = FIELD_TYPES[name]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def read_config_file(path: str | Path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if key not in FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            out[key] = _coerce(key, value)
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name in FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = _coerce(name, environ[key])
    return out


def resolve_config(config_file: str | Path | None = None, flags: Mapping[str, Any] | None = None,
                   environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    values: dict[str, Any] = {}
    if config_file:
        values.update(read_config_file(config_file))
    values.update(env_overrides(environ))
    for name, v in (flags or {}).items():
        if v is not None:
            values[name] = _coerce(name, v)
    try:
        return replace(ExperimentConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
