"""Run configuration: dataclasses, JSON load/save and the shipped presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .schema import DEFAULT_SCHEMA


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    model_dim: int = 64
    feedforward_dim: int = 128
    max_sequence_length: int = 128
    dropout_rate: float = 0.1
    positions: str = "learned"  # or "sinusoidal"

    def validate(self):
        if self.model_dim % self.n_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.n_layers < 0 or self.max_sequence_length < 1:
            raise ConfigError("n_layers must be >= 0 and max_sequence_length >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.positions not in ("learned", "sinusoidal"):
            raise ConfigError(f"unknown position scheme {self.positions!r}")


@dataclass(frozen=True)
class NerConfig:
    rnn_layers: int = 3
    rnn_hidden_dim: int = 64
    classifier_hidden_dim: int = 64
    cell: str = "elman"  # or "gru"

    def validate(self):
        if self.rnn_layers < 1:
            raise ConfigError("rnn_layers must be >= 1")
        if self.cell not in ("elman", "gru"):
            raise ConfigError(f"unknown rnn cell {self.cell!r}")


@dataclass(frozen=True)
class ReConfig:
    hidden_dim: int = 128
    ratios: dict = field(default_factory=lambda: {"PP": 4.0, "TeP": 2.0, "TrP": 1.0})
    zero_positive_floor: int = 5

    def validate(self):
        if any(r <= 0 for r in self.ratios.values()):
            raise ConfigError("downsampling ratios must be positive")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-5
    early_stop_patience: int = 10
    max_epochs: int = 200
    train_fraction: float = 0.8
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0)
    clip_norm: float | None = None
    freeze_encoder: bool = False
    min_token_freq: int = 2
    lowercase: bool = True

    def validate(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction {self.train_fraction} outside (0, 1)")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data/train"
    output_dir: str = "runs/default"
    checkpoint: str | None = None
    encoder: EncoderConfig = EncoderConfig()
    ner: NerConfig = NerConfig()
    re: ReConfig = ReConfig()
    train: TrainConfig = TrainConfig()
    schema: dict = field(default_factory=DEFAULT_SCHEMA.to_dict)

    def validate(self):
        self.encoder.validate()
        self.ner.validate()
        self.re.validate()
        self.train.validate()
        families = {f["name"] for f in self.schema["families"]}
        unknown = set(self.re.ratios) - families
        if unknown:
            raise ConfigError(f"downsampling ratios for unknown families: {sorted(unknown)}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["train"]["loss_weights"] = list(self.train.loss_weights)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        sections = {"encoder": EncoderConfig, "ner": NerConfig, "re": ReConfig, "train": TrainConfig}
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in sections:
                kwargs[key] = _section(sections[key], value, key)
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()

    def with_overrides(self, **train_overrides):
        return replace(self, train=replace(self.train, **train_overrides))


def _section(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {where!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    values = dict(values)
    if "loss_weights" in values:
        values["loss_weights"] = tuple(values["loss_weights"])
    return cls(**values)


PRESETS = {
    "paper-faithful": RunConfig(),
    # the default architecture is already desk-sized; only the schedule changes
    "desk-scale": RunConfig(
        train=TrainConfig(learning_rate=1e-3, early_stop_patience=3, max_epochs=20),
    ),
}


def load_config(path_or_preset) -> RunConfig:
    """Read a JSON config file, or return a named preset."""
    if path_or_preset in PRESETS:
        return RunConfig.from_dict(PRESETS[path_or_preset].to_dict())
    try:
        with open(path_or_preset, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path_or_preset}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_preset}: invalid JSON ({exc})") from None
    base = raw.pop("preset", None)
    if base is not None:
        if base not in PRESETS:
            raise ConfigError(f"unknown preset {base!r}")
        merged = PRESETS[base].to_dict()
        for key, value in raw.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != "schema":
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        raw = merged
    return RunConfig.from_dict(raw)
