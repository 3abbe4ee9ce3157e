"""Flat key = value run configuration.

Every hyperparameter defaults to its tuned best value, so an empty config
file trains the reference setup. Unknown keys are rejected rather than
ignored; integer-list values are comma separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """A configuration key, value, or constraint is invalid."""


@dataclass
class TrainConfig:
    # optimization
    learning_rate: float = 5e-4
    batch_size: int = 128
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    # architecture
    embedding_dim: int = 64
    n_encoder_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 0             # 0 picks the conventional 4 * encoder width
    transformer_dropout: float = 0.2
    n_cross_layers: int = 3
    cross_net_dropout: float = 0.2
    deep_hidden: tuple = (1024, 512, 256)
    head_hidden: tuple = (64, 32)
    k: int = 16
    # dataset geometry (must agree with the data headers)
    N: int = 32
    d_mm: int = 32
    n_item_features: int = 2
    n_side_features: int = 2
    # ablation switches
    use_multimodal: bool = True
    use_transformer: bool = True
    use_dcnv2: bool = True
    # synthetic data generation
    n_users: int = 200
    n_items: int = 500
    n_train: int = 8000
    n_val: int = 1000
    n_test: int = 1000
    positive_rate: float = 0.5
    gen_alpha: float = 3.0
    gen_beta: float = 1.0
    # paths (usually supplied on the command line instead)
    data_dir: str = ""
    run_dir: str = ""

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("batch_size", "patience", "max_epochs", "embedding_dim",
                     "n_encoder_layers", "n_heads", "n_item_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("transformer_dropout", "cross_net_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.n_cross_layers < 0:
            raise ConfigError(f"n_cross_layers must be >= 0, got {self.n_cross_layers}")
        if self.ffn_dim < 0:
            raise ConfigError(f"ffn_dim must be >= 0, got {self.ffn_dim}")
        if self.n_side_features < 0 or self.d_mm < 1 or self.N < 1:
            raise ConfigError("n_side_features must be >= 0, d_mm and N >= 1")
        if not 0 <= self.k <= self.N:
            raise ConfigError(f"k must satisfy 0 <= k <= N, got k={self.k} N={self.N}")
        if self.use_dcnv2 and not self.deep_hidden:
            raise ConfigError("deep_hidden must not be empty while use_dcnv2=true")
        if any(h < 1 for h in self.deep_hidden + self.head_hidden):
            raise ConfigError("hidden layer sizes must be >= 1")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError(f"positive_rate must be in (0, 1), got {self.positive_rate}")
        for name in ("n_users", "n_items", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name, field, raw):
    raw = raw.strip()
    try:
        if field.type == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: '{raw}'")
        if field.type == "int":
            return int(raw)
        if field.type == "float":
            return float(raw)
        if field.type == "tuple":
            return tuple(int(v) for v in raw.split(",")) if raw else ()
        return raw
    except ValueError as e:
        raise ConfigError(f"key '{name}': {e}")


def parse_config_text(text, source="<config>") -> TrainConfig:
    cfg = TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        name, _, raw = stripped.partition("=")
        name = name.strip()
        if name not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{name}'")
        setattr(cfg, name, _parse_value(name, _FIELDS[name], raw))
    return cfg.validate()


def parse_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), source=str(path))


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def replace(cfg: TrainConfig, **overrides) -> TrainConfig:
    for name in overrides:
        if name not in _FIELDS:
            raise ConfigError(f"unknown key '{name}'")
    out = dataclasses.replace(cfg, **overrides)
    return out.validate()


def apply_overrides(cfg: TrainConfig, pairs) -> TrainConfig:
    """Apply 'key=value' strings (command-line --set flags) onto a config."""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not of the form key=value")
        name, _, raw = pair.partition("=")
        name = name.strip()
        if name not in _FIELDS:
            raise ConfigError(f"unknown key '{name}'")
        overrides[name] = _parse_value(name, _FIELDS[name], raw)
    return replace(cfg, **overrides)


# hyperparameter sweep grids; scalar keys only
_SWEEPABLE = {name: f for name, f in _FIELDS.items()
              if f.type in ("int", "float", "bool")}

DEFAULT_GRID = {
    "learning_rate": [1e-3, 5e-4, 5e-5, 1e-5],
    "embedding_dim": [16, 32, 64, 128],
    "transformer_dropout": [0.0, 0.1, 0.2, 0.3, 0.4],
    "cross_net_dropout": [0.0, 0.1, 0.2, 0.3, 0.4],
    "k": [0, 2, 4, 8, 16, 24],
}


def parse_grid_text(text, source="<grid>") -> dict:
    """Parse a sweep spec: one 'key = v1, v2, ...' line per hyperparameter."""
    grid = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = v1, v2, ...'")
        name, _, raw = stripped.partition("=")
        name = name.strip()
        if name not in _SWEEPABLE:
            raise ConfigError(f"{source}:{lineno}: '{name}' is not a sweepable key")
        values = [v for v in (tok.strip() for tok in raw.split(",")) if v]
        if not values:
            raise ConfigError(f"{source}:{lineno}: no values for '{name}'")
        grid[name] = [_parse_value(name, _SWEEPABLE[name], v) for v in values]
    if not grid:
        raise ConfigError(f"{source}: grid is empty")
    return grid


def parse_grid(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_grid_text(f.read(), source=str(path))
