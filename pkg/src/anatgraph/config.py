"""Run configuration: nested dataclasses, JSON loading, dotted overrides.

Every field has a documented default; unknown keys are rejected with the
offending path, and ``--set a.b.c=value`` overrides parse the value as a JSON
literal (falling back to a bare string).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .data import SyntheticConfig
from .errors import ConfigError


@dataclass
class DataSection:
    """Where windows come from: the synthetic generator or a CSV+manifest pair."""

    source: str = "synthetic"                      # "synthetic" | "csv"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    csv_path: str | None = None
    manifest_path: str | None = None
    window_len: int = 64                           # used for CSV data; synthetic carries its own
    window_stride: int = 32

    def validate(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and (self.csv_path is None or self.manifest_path is None):
            raise ConfigError("data.source 'csv' requires data.csv_path and data.manifest_path")


@dataclass
class GraphSection:
    rules_path: str | None = None                  # overrides the built-in defaults
    cross_lateral: bool = True                     # cross-side lateral pairs for the full-body layout


@dataclass
class ModelSection:
    embed_dim: int = 8                             # relation-type embedding width d
    latent_dim: int = 8
    cvae_hidden: int = 32
    conv1_channels: int = 16
    conv2_channels: int = 32
    kernel_size: int = 5
    pool_width: int = 2
    gc1_dim: int = 64
    gc2_dim: int = 64
    g_dim: int = 64
    head_hidden: int = 64
    disc_hidden: int = 64
    leaky_slope: float = 0.01
    edge_alpha: float = 10.0
    edge_r_min: float = 0.0
    edge_r_max: float = 1.0
    edge_beta: float = 0.01


@dataclass
class LossSection:
    lambda_edge: float = 1.0
    kl_weight: float = 1.0
    zeta: float = 0.5


@dataclass
class TrainSection:
    epochs: int = 130
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"                        # "adam" | "sgd"
    m_epochs: int = 5                              # per-phase length of the adversarial cycle
    attention: str = "learned"                     # "learned" | "uniform"
    cvae_warmup_epochs: int = 0                    # epochs of CVAE-only training before the joint objective

    def validate(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"train.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.attention not in ("learned", "uniform"):
            raise ConfigError(f"train.attention must be 'learned' or 'uniform', got {self.attention!r}")
        if self.epochs < 1 or self.batch_size < 2 or self.m_epochs < 1:
            raise ConfigError("train.epochs >= 1, train.batch_size >= 2, and train.m_epochs >= 1 required")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")


@dataclass
class RunConfig:
    seed: int = 7
    out_dir: str = "runs/run"
    held_out: str | None = None                    # cluster for single-split training; default: first
    pearson_prefix_step: int = 10
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.train.validate()
        for name in ("lambda_edge", "kl_weight", "zeta"):
            if getattr(self.loss, name) < 0:
                raise ConfigError(f"loss.{name} must be nonnegative")
        return self


def _from_dict(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config field {path or '$'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        where = f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0]
        raise ConfigError(f"unknown config key {where!r}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        sub_path = f"{path}.{name}" if path else name
        ftype = _resolve_type(f)
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _from_dict(ftype, value, sub_path)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"invalid config near {path or '$'}: {err}") from None


def _resolve_type(f: dataclasses.Field):
    mapping = {
        "DataSection": DataSection, "GraphSection": GraphSection, "ModelSection": ModelSection,
        "LossSection": LossSection, "TrainSection": TrainSection, "SyntheticConfig": SyntheticConfig,
    }
    if isinstance(f.type, str):
        return mapping.get(f.type, f.type)
    return f.type


def config_from_dict(doc: dict) -> RunConfig:
    return _from_dict(RunConfig, doc, "").validate()


def load_config(name_or_path: str) -> RunConfig:
    """Load a config by file path or bundled profile name (see configs/)."""
    path = Path(name_or_path)
    if not path.exists():
        candidate = name_or_path if name_or_path.endswith(".json") else f"{name_or_path}.json"
        bundled = resources.files("anatgraph").joinpath("configs", candidate)
        if bundled.is_file():
            return config_from_dict(json.loads(bundled.read_text()))
        raise ConfigError(f"config {name_or_path!r} is neither a file nor a bundled profile")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None
    return config_from_dict(doc)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key.path=value`` overrides; values parse as JSON literals."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, leaf)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"config key {key!r} is a section, not a value")
        setattr(target, leaf, value)
    return cfg.validate()


def resolved_dict(cfg: RunConfig) -> dict:
    """Full config including defaults, as written next to run outputs."""
    return dataclasses.asdict(cfg)


def write_resolved(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.json"
    path.write_text(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True))
    return path
