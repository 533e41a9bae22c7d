"""Run configuration and the line-oriented `section.key = value` file format.

Unknown keys fail fast; every key has a declared default so a config file
only needs to state deviations.  `inf` is accepted for cluster.threshold_d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .clustering import ClusterConfig, Metric
from .data import SynthConfig
from .errors import ConfigError
from .federation import FederationConfig


class Baseline(str, Enum):
    NONE = "NONE"
    SOURCE_ONLY = "SOURCE_ONLY"
    TARGET_ONLY = "TARGET_ONLY"
    MERGE = "MERGE"
    FINE_TUNE = "FINE_TUNE"


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    embed_dim: int = 8
    scale: float = 16.0
    margin: float = 0.5

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.embed_dim < 1:
            raise ConfigError("model dims must be >= 1")
        if self.scale <= 0:
            raise ConfigError("model.scale must be > 0")
        if not (0.0 <= self.margin < math.pi / 2):
            raise ConfigError("model.margin must lie in [0, pi/2)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    fed: FederationConfig = field(default_factory=FederationConfig)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=10, batch_size=32, lr=0.05))
    baseline: Baseline = Baseline.NONE
    output_dir: Path = Path("out")

    def validate(self) -> "RunConfig":
        self.synth.validate()
        self.model.validate()
        self.cluster.validate()
        self.fed.validate()
        self.pretrain.validate()
        self.finetune.validate()
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Override both generation and federation seeds at once."""
        return RunConfig(
            synth=replace(self.synth, seed=seed),
            model=self.model,
            cluster=self.cluster,
            fed=replace(self.fed, master_seed=seed),
            pretrain=self.pretrain,
            finetune=self.finetune,
            baseline=self.baseline,
            output_dir=self.output_dir,
        )


def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _parse_float(value: str) -> float:
    if value.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"expected a float, got {value!r}") from exc


def _parse_int(value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {value!r}") from exc


_SCHEMA = {
    "synth.dim_in": ("synth", "dim_in", _parse_int),
    "synth.ids_source": ("synth", "ids_source", _parse_int),
    "synth.ids_target": ("synth", "ids_target", _parse_int),
    "synth.samples_per_id": ("synth", "samples_per_id", _parse_int),
    "synth.noise_sigma": ("synth", "noise_sigma", _parse_float),
    "synth.shift_strength": ("synth", "shift_strength", _parse_float),
    "synth.eval_id_fraction": ("synth", "eval_id_fraction", _parse_float),
    "synth.seed": ("synth", "seed", _parse_int),
    "model.hidden_dim": ("model", "hidden_dim", _parse_int),
    "model.embed_dim": ("model", "embed_dim", _parse_int),
    "model.scale": ("model", "scale", _parse_float),
    "model.margin": ("model", "margin", _parse_float),
    "cluster.threshold_d": ("cluster", "threshold_d", _parse_float),
    "cluster.metric": ("cluster", "metric", Metric),
    "cluster.min_cluster_size": ("cluster", "min_cluster_size", _parse_int),
    "fed.n_clients": ("fed", "n_clients", _parse_int),
    "fed.local_iters": ("fed", "local_iters", _parse_int),
    "fed.batch_size": ("fed", "batch_size", _parse_int),
    "fed.lr": ("fed", "lr", _parse_float),
    "fed.lambda": ("fed", "lam", _parse_float),
    "fed.rounds": ("fed", "rounds", _parse_int),
    "fed.master_seed": ("fed", "master_seed", _parse_int),
    "fed.weight_by_size": ("fed", "weight_by_size", _parse_bool),
    "pretrain.epochs": ("pretrain", "epochs", _parse_int),
    "pretrain.batch_size": ("pretrain", "batch_size", _parse_int),
    "pretrain.lr": ("pretrain", "lr", _parse_float),
    "finetune.epochs": ("finetune", "epochs", _parse_int),
    "finetune.batch_size": ("finetune", "batch_size", _parse_int),
    "finetune.lr": ("finetune", "lr", _parse_float),
    "run.baseline": ("run", "baseline", Baseline),
    "run.output_dir": ("run", "output_dir", Path),
}


def parse_config(text: str) -> RunConfig:
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, convert = _SCHEMA[key]
        try:
            overrides.setdefault(section, {})[attr] = convert(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: bad value {value!r}") from exc

    run_over = overrides.pop("run", {})
    cfg = RunConfig(
        synth=SynthConfig(**overrides.get("synth", {})),
        model=ModelConfig(**overrides.get("model", {})),
        cluster=ClusterConfig(**overrides.get("cluster", {})),
        fed=FederationConfig(**overrides.get("fed", {})),
        pretrain=TrainConfig(**overrides.get("pretrain", {})),
        finetune=replace(RunConfig().finetune, **overrides.get("finetune", {})),
        baseline=run_over.get("baseline", Baseline.NONE),
        output_dir=run_over.get("output_dir", Path("out")),
    )
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
