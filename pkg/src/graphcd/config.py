"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .encoder import EncoderConfig
from .losses import LossConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    data_dir: str = ""
    lr: float = 4e-4
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    total_epochs: int = 100
    total_steps: int = 0      # > 0 switches the schedule/stop to step counting
    batch_size: int = 8
    seed: int = 0
    device: str = "cpu"
    vertices: int = 32
    use_gim: bool = True
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (64, 64, 128, 256)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2)
    output_stride: int = 16
    gamma: float = 2.0
    alpha: float = 0.2
    lambda_focal: float = 0.5
    lambda_dice: float = 1.0
    dice_epsilon: float = 1e-6
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.vertices < 1:
            raise ConfigError(f"vertices must be >= 1, got {self.vertices}")
        if self.device != "cpu":
            raise ConfigError(f"only device = cpu is supported, got {self.device!r}")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, alpha=self.alpha,
                          lambda_focal=self.lambda_focal,
                          lambda_dice=self.lambda_dice,
                          epsilon=self.dice_epsilon)

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(in_channels=self.in_channels,
                             stage_channels=tuple(self.stage_channels),
                             blocks_per_stage=tuple(self.blocks_per_stage),
                             output_stride=self.output_stride)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(encoder=self.encoder, vertices=self.vertices,
                           use_gim=self.use_gim)

    def model_signature(self) -> dict:
        """The fields that must match for a checkpoint to be loadable."""
        return {
            "vertices": self.vertices, "use_gim": self.use_gim,
            "in_channels": self.in_channels,
            "stage_channels": tuple(self.stage_channels),
            "blocks_per_stage": tuple(self.blocks_per_stage),
            "output_stride": self.output_stride,
        }


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(name: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            if text.lower() not in _BOOL:
                raise ValueError(text)
            return _BOOL[text.lower()]
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is str:
            return text
        # remaining fields are integer tuples, comma separated
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from exc


def parse_config_text(text: str) -> TrainConfig:
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val, type(getattr(defaults, key)))
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
