"""Experiment configuration as flat ``section.key = value`` text.

Parsing is strict: unknown sections or keys, malformed values and duplicate
keys are all fatal, and every error names the offending key. Lists are
comma-separated; ``none`` stands for an unset optional value.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .nn import ArchitectureSpec
from .selection import POLICIES, SelectorConfig


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | csv
    seed: int = 0
    num_classes: int = 15
    feature_dim: int = 43
    samples_per_class: tuple[int, ...] = (2000,) * 15
    cluster_spread: float = 1.0
    center_scale: float = 1.0
    csv_path: str = ""
    label_column: str = "label"
    drop_columns: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()
    majority_class: str = ""
    cap_fraction: float = 0.0  # 0 disables the cap
    split: tuple[float, ...] = (0.70, 0.15, 0.15)
    stratified: bool = True


@dataclass
class PartitionConfig:
    num_clients: int = 100
    scheme: str = "class-inventory"
    min_classes: int = 1
    max_classes: int | None = None
    min_samples: int = 1
    max_samples: int | None = None
    alpha: float = 0.5


@dataclass
class ModelConfig:
    hidden_dims: tuple[int, ...] = (128, 64, 32)
    dropout_rate: float = 0.3
    dropout_layers: tuple[int, ...] = (1, 2)


@dataclass
class TrainingConfig:
    rounds: int = 100
    clients_per_round: float = 0.1  # < 1 is a fraction of num_clients
    local_epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 256
    eval_every: int = 1
    score_subsample: float = 1.0


@dataclass
class SelectorSection:
    policies: tuple[str, ...] = POLICIES
    rho: float = 0.3
    cold_start: int = 15
    window: int = 5
    quality_floor: float = 0.01
    stability: float = 1e-8
    poc_candidate_factor: int = 2
    oort_exploration_weight: float = 1.0
    oort_epsilon: float = 0.1


@dataclass
class ValidationConfig:
    mode: str = "stratified"  # stratified | uniform
    per_class: int | None = None


@dataclass
class ExperimentSection:
    seeds: tuple[int, ...] = (7, 42, 123)
    output_dir: str = "runs"
    thresholds: tuple[float, ...] = (0.75, 0.80)


SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "selector": SelectorSection,
    "validation": ValidationConfig,
    "experiment": ExperimentSection,
}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    selector: SelectorSection = field(default_factory=SelectorSection)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def architecture(self, feature_dim: int | None = None, num_classes: int | None = None) -> ArchitectureSpec:
        d_in = self.dataset.feature_dim if feature_dim is None else feature_dim
        d_out = self.dataset.num_classes if num_classes is None else num_classes
        return ArchitectureSpec((d_in, *self.model.hidden_dims, d_out), self.model.dropout_rate,
                                frozenset(self.model.dropout_layers))

    def selector_config(self, policy: str) -> SelectorConfig:
        s = self.selector
        return SelectorConfig(policy=policy, clients_per_round=self.training.clients_per_round, rho=s.rho,
                              cold_start=s.cold_start, window=s.window, quality_floor=s.quality_floor,
                              stability=s.stability, poc_candidate_factor=s.poc_candidate_factor,
                              oort_exploration_weight=s.oort_exploration_weight, oort_epsilon=s.oort_epsilon)

    def replace(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with ``section__key=value`` overrides, e.g. ``training__rounds=5``."""
        out = dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name)) for name in SECTIONS})
        for key, value in dotted.items():
            section, _, name = key.partition("__")
            sec = getattr(out, section)
            if name not in {f.name for f in dataclasses.fields(sec)}:
                raise ConfigError(f"{section}.{name}", "unknown key")
            setattr(sec, name, value)
        return out

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self


# --------------------------------------------------------------------------
# text format

def _field_types(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _parse_scalar(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
    except ValueError:
        pass
    raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}")


def _parse_value(tp, raw: str, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)][0]
        return None if raw.strip().lower() == "none" else _parse_value(inner, raw, key)
    if origin is tuple:
        if not raw.strip():
            return ()
        return tuple(_parse_scalar(args[0], part, key) for part in raw.split(","))
    return _parse_scalar(tp, raw, key)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def parse_config(text: str, validate: bool = True) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}", f"expected 'section.key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        section, dot, name = key.partition(".")
        if not dot or section not in SECTIONS:
            raise ConfigError(key, f"unknown section; valid sections: {', '.join(SECTIONS)}")
        types = _field_types(SECTIONS[section])
        if name not in types:
            raise ConfigError(key, f"unknown key; valid keys: {', '.join(types)}")
        setattr(getattr(cfg, section), name, _parse_value(types[name], raw, key))
    return cfg.validate() if validate else cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        sec = getattr(cfg, section)
        for f in dataclasses.fields(sec):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text)


def _validate(cfg: ExperimentConfig) -> None:
    d, p, t, s, v, e = cfg.dataset, cfg.partition, cfg.training, cfg.selector, cfg.validation, cfg.experiment

    def check(ok: bool, key: str, msg: str):
        if not ok:
            raise ConfigError(key, msg)

    check(d.source in ("synthetic", "csv"), "dataset.source", "must be 'synthetic' or 'csv'")
    if d.source == "synthetic":
        check(d.num_classes >= 1, "dataset.num_classes", "must be >= 1")
        check(d.feature_dim >= 1, "dataset.feature_dim", "must be >= 1")
        check(len(d.samples_per_class) == d.num_classes, "dataset.samples_per_class",
              f"needs {d.num_classes} entries, got {len(d.samples_per_class)}")
        check(all(c >= 1 for c in d.samples_per_class), "dataset.samples_per_class", "counts must be positive")
        check(d.cluster_spread >= 0, "dataset.cluster_spread", "must be >= 0")
    else:
        check(bool(d.csv_path), "dataset.csv_path", "required when source = csv")
    check(d.cap_fraction == 0.0 or 0.0 < d.cap_fraction < 1.0, "dataset.cap_fraction", "must be 0 or in (0, 1)")
    check(d.cap_fraction == 0.0 or bool(d.majority_class), "dataset.majority_class",
          "required when cap_fraction is set")
    check(len(d.split) == 3 and all(f >= 0 for f in d.split) and abs(sum(d.split) - 1.0) <= 1e-9,
          "dataset.split", "needs three nonnegative fractions summing to 1")

    check(p.num_clients >= 1, "partition.num_clients", "must be >= 1")
    check(p.scheme in ("class-inventory", "dirichlet"), "partition.scheme",
          "must be 'class-inventory' or 'dirichlet'")
    check(p.min_classes >= 1, "partition.min_classes", "must be >= 1")
    check(p.max_classes is None or p.max_classes >= p.min_classes, "partition.max_classes",
          "must be >= min_classes")
    check(p.min_samples >= 1, "partition.min_samples", "must be >= 1")
    check(p.max_samples is None or p.max_samples >= p.min_samples, "partition.max_samples",
          "must be >= min_samples")
    check(p.alpha > 0, "partition.alpha", "must be positive")

    try:
        cfg.architecture()
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None

    check(t.rounds >= 0, "training.rounds", "must be >= 0")
    check(t.clients_per_round > 0, "training.clients_per_round", "must be positive")
    check(t.clients_per_round < 1 or float(t.clients_per_round).is_integer(), "training.clients_per_round",
          "counts >= 1 must be whole numbers")
    check(t.clients_per_round < 1 or t.clients_per_round <= p.num_clients, "training.clients_per_round",
          "exceeds num_clients")
    check(t.local_epochs >= 0, "training.local_epochs", "must be >= 0")
    check(t.learning_rate > 0, "training.learning_rate", "must be positive")
    check(t.batch_size >= 1, "training.batch_size", "must be >= 1")
    check(t.eval_every >= 1, "training.eval_every", "must be >= 1")
    check(0.0 < t.score_subsample <= 1.0, "training.score_subsample", "must lie in (0, 1]")

    check(len(s.policies) >= 1, "selector.policies", "at least one policy required")
    for name in s.policies:
        check(name in POLICIES, "selector.policies", f"unknown policy {name!r}; valid policies: {', '.join(POLICIES)}")
    check(0.0 <= s.rho <= 1.0, "selector.rho", "must lie in [0, 1]")
    check(s.cold_start >= 0, "selector.cold_start", "must be >= 0")
    check(s.window >= 1, "selector.window", "must be >= 1")
    check(0.0 < s.quality_floor <= 1.0, "selector.quality_floor", "must lie in (0, 1]")
    check(s.stability > 0, "selector.stability", "must be positive")
    check(s.poc_candidate_factor >= 1, "selector.poc_candidate_factor", "must be >= 1")
    check(s.oort_exploration_weight >= 0, "selector.oort_exploration_weight", "must be >= 0")
    check(0.0 <= s.oort_epsilon <= 1.0, "selector.oort_epsilon", "must lie in [0, 1]")

    check(v.mode in ("stratified", "uniform"), "validation.mode", "must be 'stratified' or 'uniform'")
    check(v.mode != "uniform" or (v.per_class is not None and v.per_class >= 1), "validation.per_class",
          "uniform mode needs per_class >= 1")

    check(len(e.seeds) >= 1, "experiment.seeds", "at least one seed required")
    check(all(0.0 <= x <= 1.0 for x in e.thresholds), "experiment.thresholds", "must lie in [0, 1]")
