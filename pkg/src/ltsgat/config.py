"""Training configuration, named presets, and config-file loading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

CONFIG_SCHEMA_VERSION = 1

DEFAULT_BAND_NAMES = ["theta", "alpha", "beta", "gamma"]


@dataclass
class TrainConfig:
    """Everything the pipeline needs to build and train one model."""
    preset: str = "custom"
    n_channels: int = 32
    segments: int = 10                 # k
    bands: list[str] = field(default_factory=lambda: list(DEFAULT_BAND_NAMES))
    lstm_hidden: int = 16              # per-direction hidden size d_h
    region_dim: int = 0                # m; 0 means 2 * lstm_hidden
    gat_layers: int = 4
    gat_hidden: int = 28               # F' (also the GAT input width F)
    attention_heads: int = 2
    learning_rate: float = 0.001
    batch_size: int = 24
    epochs: int = 20
    seed: int = 0
    leaky_slope: float = 0.2
    disc_hidden: int = 64
    disable_temporal: bool = False     # variant without segment attention
    disable_spatial: bool = False      # variant without Bi-LSTM/region block
    disable_domain_adaptation: bool = False
    rating_threshold_inclusive: bool = False
    lambda_override: float | None = None
    region_map_path: str | None = None
    region_map: dict | None = None     # inline {"regions": ...}; wins over path
    topology: dict = field(default_factory=lambda: {"mode": "full"})

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def resolved_region_dim(self) -> int:
        return self.region_dim if self.region_dim > 0 else 2 * self.lstm_hidden

    def validate(self) -> None:
        positive = ["n_channels", "segments", "lstm_hidden", "gat_layers",
                    "gat_hidden", "attention_heads", "batch_size", "epochs",
                    "disc_hidden"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field {name} must be positive, "
                                  f"got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.bands:
            raise ConfigError("at least one band is required")
        if self.region_dim < 0:
            raise ConfigError("region_dim must be >= 0 (0 selects 2 * lstm_hidden)")
        if self.lambda_override is not None and self.lambda_override < 0:
            raise ConfigError("lambda_override must be >= 0")

    def to_dict(self) -> dict:
        out = {"schema_version": CONFIG_SCHEMA_VERSION}
        out.update(asdict(self))
        return out


# Hyperparameter presets per dataset and evaluation paradigm.
PRESETS: dict[str, dict] = {
    "hci-dep": dict(lstm_hidden=16, gat_layers=4, gat_hidden=28,
                    attention_heads=2, learning_rate=0.001, batch_size=24,
                    epochs=20, disable_domain_adaptation=True),
    "hci-indep": dict(lstm_hidden=48, gat_layers=4, gat_hidden=16,
                      attention_heads=4, learning_rate=0.001, batch_size=128,
                      epochs=15),
    "deap-dep": dict(lstm_hidden=32, gat_layers=4, gat_hidden=18,
                     attention_heads=2, learning_rate=0.001, batch_size=128,
                     epochs=20, disable_domain_adaptation=True),
    "deap-indep": dict(lstm_hidden=32, gat_layers=4, gat_hidden=16,
                       attention_heads=4, learning_rate=0.0001, batch_size=80,
                       epochs=30),
    # desk-scale preset for synthetic-data checks and quick runs
    "synthetic-desk": dict(lstm_hidden=8, gat_layers=2, gat_hidden=12,
                           attention_heads=2, learning_rate=0.005,
                           batch_size=24, epochs=20,
                           disable_domain_adaptation=True),
}

_FIELD_NAMES = {f.name for f in fields(TrainConfig)}


def preset_config(name: str) -> TrainConfig:
    if name == "custom":
        return TrainConfig()
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: "
                          f"{sorted(PRESETS) + ['custom']}")
    cfg = TrainConfig(preset=name, **PRESETS[name])
    cfg.validate()
    return cfg


def _apply(cfg: TrainConfig, values: dict, source: str) -> None:
    unknown = sorted(set(values) - _FIELD_NAMES - {"schema_version"})
    if unknown:
        raise ConfigError(f"unknown config key(s) in {source}: {unknown}")
    for key, val in values.items():
        if key == "schema_version":
            continue
        setattr(cfg, key, val)


def load_config(path: str | None = None, preset: str | None = None,
                overrides: dict | None = None) -> TrainConfig:
    """Resolve a config: flag overrides > config file > preset > defaults."""
    file_values: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        version = file_values.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {version} unsupported "
                              f"(expected {CONFIG_SCHEMA_VERSION})")
        preset = preset or file_values.get("preset")
    cfg = preset_config(preset) if preset else TrainConfig()
    _apply(cfg, file_values, source=path or "config file")
    if overrides:
        _apply(cfg, overrides, source="command-line overrides")
    cfg.validate()
    return cfg


def config_from_dict(values: dict) -> TrainConfig:
    cfg = TrainConfig()
    _apply(cfg, values, source="embedded config")
    cfg.validate()
    return cfg
