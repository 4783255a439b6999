"""Flat key = value run configuration shared by every CLI command.

Every field has a documented default; unknown keys are rejected so typos
cannot silently fall back to defaults. Values are coerced to the type of the
field's default (ints, floats, booleans, comma-separated integer lists).
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainSchedule


@dataclass
class RunConfig:
    # model
    variant: str = "full"
    in_channels: int = 3
    num_classes: int = 2
    input_size: int = 256
    extractor_rates: list = field(default_factory=lambda: [1, 2, 2, 2])
    extractor_strides: list = field(default_factory=lambda: [1, 2, 4, 8])
    extractor_channels: int = 64
    stage_channels: list = field(default_factory=lambda: [64, 128, 256, 512])
    bottleneck_channels: int = 1024
    # optimization
    loss: str = "cross_entropy"  # single option today; field reserves the knob
    base_lr: float = 0.01
    decay_factor: float = 0.1
    decay_period: int = 25
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    # data
    data_root: str = ""
    layout: str = "cuhk"
    invert_mask: bool = False
    motion_prefix: str = "motion"
    motion_list: str = ""
    train_n: int = 800
    augment_policy: str = "hflip_vflip"
    # run
    out_dir: str = ""
    checkpoint_every: int = 25
    save_maps: bool = False
    aggregation: str = "micro"
    workers: int = 0
    deterministic: bool = False

    def set(self, key: str, raw: str):
        if key not in self.__dataclass_fields__:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _coerce(key, getattr(type(self)(), key), raw))

    def apply_overrides(self, overrides):
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, _, raw = item.partition("=")
            self.set(key.strip(), raw.strip())
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, raw = line.partition("=")
            cfg.set(key.strip(), raw.strip())
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def validate(self) -> "RunConfig":
        self.model_config()
        self.schedule()
        if self.layout not in ("cuhk", "dut"):
            raise ConfigError(f"layout must be 'cuhk' or 'dut', got {self.layout!r}")
        if self.augment_policy not in ("hflip", "hflip_vflip", "none"):
            raise ConfigError(
                f"augment_policy must be hflip|hflip_vflip|none, got {self.augment_policy!r}"
            )
        if self.aggregation not in ("micro", "macro"):
            raise ConfigError(f"aggregation must be micro|macro, got {self.aggregation!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"loss must be cross_entropy, got {self.loss!r}")
        if self.workers < 0 or self.checkpoint_every < 0 or self.train_n < 1:
            raise ConfigError("workers and checkpoint_every must be >= 0, train_n >= 1")
        return self

    def model_config(self, variant=None) -> ModelConfig:
        return ModelConfig(
            in_channels=self.in_channels,
            num_classes=self.num_classes,
            input_size=self.input_size,
            extractor_rates=list(self.extractor_rates),
            extractor_strides=list(self.extractor_strides),
            extractor_channels=self.extractor_channels,
            stage_channels=list(self.stage_channels),
            bottleneck_channels=self.bottleneck_channels,
            variant=variant or self.variant,
        ).validate()

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(
            base_lr=self.base_lr,
            decay_factor=self.decay_factor,
            decay_period=self.decay_period,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        ).validate()


def _coerce(key: str, default, raw: str):
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(v) for v in raw.split(",") if v.strip() != ""]
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc
