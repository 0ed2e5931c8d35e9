"""Run configuration: the TrainConfig record, the line-based config file
format (``key = value``, ``#`` comments, unknown keys rejected), and the
configuration hash stored in checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import EncoderConfig, ModelConfig


@dataclass
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    n_classes: int = 4
    alpha: float = 1.0
    lambda_div: float = 0.2
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 2000
    batch_size: int = 8
    eval_interval: int = 250
    eval_samples: int = 64
    unified_channels: int = 64
    encoder_widths: tuple = (32, 64, 128, 256)
    encoder_blocks: tuple = (1, 1, 1, 1)
    attention_heads: int = 8
    se_ratio: int = 4
    use_fr: bool = True
    updater: str = "gated"

    def validate(self) -> "TrainConfig":
        if self.image_size % 32:
            raise ConfigError(f"image_size must divide by 32, got {self.image_size}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        for key in ("lambda_div", "lambda_focal", "lambda_dice",
                    "learning_rate", "weight_decay"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ConfigError("batch_size must be >= 1 and total_steps >= 0")
        if len(self.encoder_widths) != 4 or len(self.encoder_blocks) != 4:
            raise ConfigError("encoder_widths and encoder_blocks need 4 entries")
        if any(w % 2 for w in self.encoder_widths):
            raise ConfigError(f"encoder widths must be even: {self.encoder_widths}")
        if self.unified_channels % self.attention_heads:
            raise ConfigError(
                f"unified_channels {self.unified_channels} not divisible by "
                f"attention_heads {self.attention_heads}"
            )
        if self.updater not in ("gated", "plus"):
            raise ConfigError(f"updater must be 'gated' or 'plus', got {self.updater!r}")
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_classes=self.n_classes,
            width=self.unified_channels,
            alpha=self.alpha,
            image_size=self.image_size,
            heads=self.attention_heads,
            se_ratio=self.se_ratio,
            encoder=EncoderConfig(widths=tuple(self.encoder_widths),
                                  blocks=tuple(self.encoder_blocks)),
            use_fr=self.use_fr,
            updater=self.updater,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def format_config(cfg: TrainConfig) -> str:
    """Canonical text form; also the input to the config hash."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return TrainConfig(**values).validate()


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def save_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text(format_config(cfg))


def config_hash(cfg: TrainConfig) -> int:
    """First 8 bytes (little-endian) of sha256 over the canonical text."""
    digest = hashlib.sha256(format_config(cfg).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
