"""Segmentation network: multi-scale dilated texture extractors fused by a
U-shaped encoder-decoder, with a per-pixel two-class softmax head.

Four parallel extractors read the source image at dilation rates (1,2,2,2)
and downsample with strides (1,2,4,8) so that extractor k matches the spatial
resolution of contracting stage k. Variants:

* ``full``       -- extractors + skip connections (the reference model)
* ``no_skip``    -- same encoder, decoder sees only upsampled features
* ``dense5x5``   -- extractor dilated 3x3 convs swapped for dense 5x5 convs
* ``plain_unet`` -- no extractors; stage 1 consumes the raw image
"""

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError

VARIANTS = ("full", "no_skip", "dense5x5", "plain_unet")


@dataclass
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 2
    input_size: int = 256
    extractor_rates: list = field(default_factory=lambda: [1, 2, 2, 2])
    extractor_strides: list = field(default_factory=lambda: [1, 2, 4, 8])
    extractor_channels: int = 64
    stage_channels: list = field(default_factory=lambda: [64, 128, 256, 512])
    bottleneck_channels: int = 1024
    variant: str = "full"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if len(self.extractor_rates) != 4 or len(self.extractor_strides) != 4 \
                or len(self.stage_channels) != 4:
            raise ConfigError(
                "extractor_rates, extractor_strides and stage_channels must each "
                f"have 4 entries, got {len(self.extractor_rates)}/"
                f"{len(self.extractor_strides)}/{len(self.stage_channels)}"
            )
        for i, s in enumerate(self.extractor_strides):
            if s != 2 ** i:
                raise ConfigError(
                    f"extractor_strides[{i}] must be {2 ** i} to match contracting "
                    f"stage {i + 1}'s resolution, got {s}"
                )
        if any(r < 1 for r in self.extractor_rates):
            raise ConfigError(f"extractor_rates must be >= 1, got {self.extractor_rates}")
        if self.input_size % 16 != 0 or self.input_size < 16:
            raise ConfigError(
                f"input_size must be a positive multiple of 16 (four 2x2 poolings), "
                f"got {self.input_size}"
            )
        channels = [self.in_channels, self.num_classes, self.extractor_channels,
                    self.bottleneck_channels, *self.stage_channels]
        if any(c < 1 for c in channels):
            raise ConfigError(f"all channel counts must be >= 1, got {channels}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


def tiny_config(variant: str = "full", input_size: int = 32) -> ModelConfig:
    """Down-scaled preset used by tests and gradient checks."""
    return ModelConfig(
        input_size=input_size,
        extractor_channels=4,
        stage_channels=[4, 8, 16, 32],
        bottleneck_channels=64,
        variant=variant,
    ).validate()


class Extractor(nn.Module):
    """Texture branch: dilated 3x3 -> strided 3x3 + ReLU -> smoothing 3x3."""

    def __init__(self, in_channels, out_channels, rate, stride, dense5x5=False):
        super().__init__()
        if dense5x5:
            k, d = 5, 1
        else:
            k, d = 3, rate
        self.dilated = nn.Conv2d(in_channels, out_channels, k, dilation=d,
                                 padding=(k - 1) // 2 * d)
        self.down = nn.Conv2d(out_channels, out_channels, 3, stride=stride, padding=1)
        self.relu = nn.ReLU()
        self.smooth = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, x):
        x = self.dilated(x)
        x = self.relu(self.down(x))
        return self.smooth(x)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by a ReLU."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.relu2 = nn.ReLU()

    def forward(self, x):
        return self.relu2(self.conv2(self.relu1(self.conv1(x))))


class UpStage(nn.Module):
    """2x2 transposed conv halving the channels, optional skip concat, conv block."""

    def __init__(self, in_channels, skip_channels, out_channels, skip=True):
        super().__init__()
        half = in_channels // 2
        self.up = nn.ConvTranspose2d(in_channels, half, 2, stride=2)
        self.skip = skip
        self.block = ConvBlock(half + skip_channels if skip else half, out_channels)

    def forward(self, x, shallow=None):
        x = self.up(x)
        if self.skip:
            x = torch.cat([shallow, x], dim=1)
        return self.block(x)


class MultiScaleDilatedUNet(nn.Module):
    """The full computation graph, parameterized by :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        ext_ch = config.extractor_channels
        stages = config.stage_channels
        self.has_extractors = config.variant != "plain_unet"
        self.has_skips = config.variant != "no_skip"

        if self.has_extractors:
            dense = config.variant == "dense5x5"
            self.extractors = nn.ModuleList([
                Extractor(config.in_channels, ext_ch, rate, stride, dense5x5=dense)
                for rate, stride in zip(config.extractor_rates, config.extractor_strides)
            ])
            stage_in = [ext_ch] + [ext_ch + stages[k] for k in range(3)]
        else:
            stage_in = [config.in_channels] + stages[:3]

        self.stages = nn.ModuleList(
            ConvBlock(c_in, c_out) for c_in, c_out in zip(stage_in, stages)
        )
        self.pool = nn.MaxPool2d(2, 2)
        self.bottleneck = ConvBlock(stages[3], config.bottleneck_channels)

        widths = [config.bottleneck_channels] + stages[:0:-1]
        self.up_stages = nn.ModuleList(
            UpStage(w_in, stages[3 - k], stages[3 - k], skip=self.has_skips)
            for k, w_in in enumerate(widths)
        )
        self.head = nn.Conv2d(stages[0], config.num_classes, 1)
        self.softmax = nn.Softmax(dim=1)

    def forward(self, batch):
        cfg = self.config
        if batch.ndim != 4 or batch.shape[1] != cfg.in_channels \
                or batch.shape[2] != cfg.input_size or batch.shape[3] != cfg.input_size:
            raise ShapeError(
                f"expected batch of Bx{cfg.in_channels}x{cfg.input_size}x"
                f"{cfg.input_size}, got {tuple(batch.shape)}"
            )
        down = []
        x = None
        for k, stage in enumerate(self.stages):
            pooled = self.pool(x) if k > 0 else None
            if self.has_extractors:
                ext = self.extractors[k](batch)
                x = ext if k == 0 else torch.cat([ext, pooled], dim=1)
            else:
                x = batch if k == 0 else pooled
            x = stage(x)
            down.append(x)
        x = self.bottleneck(self.pool(down[3]))
        for up, shallow in zip(self.up_stages, reversed(down)):
            x = up(x, shallow if self.has_skips else None)
        return self.softmax(self.head(x))


def build_model(config: ModelConfig, seed: int = 0,
                dtype: torch.dtype = torch.float32) -> MultiScaleDilatedUNet:
    """Construct the variant named by the config and initialize its weights."""
    model = MultiScaleDilatedUNet(config).to(dtype)
    init_parameters(model, seed)
    return model


# classifier head starts near zero so optimization begins from uniform
# per-pixel predictions instead of confidently wrong ones
HEAD_INIT_SCALE = 0.01


def init_parameters(model: nn.Module, seed: int):
    """Fan-in-scaled normal init for conv weights, zero biases, seeded.

    Draws are made in float64 regardless of model dtype so a config + seed
    pins the same parameter values at any precision.
    """
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.weight.shape[1] * module.weight.shape[2] * module.weight.shape[3]
        elif isinstance(module, nn.ConvTranspose2d):
            fan_in = module.weight.shape[0] * module.weight.shape[2] * module.weight.shape[3]
        else:
            continue
        std = math.sqrt(2.0 / fan_in)
        with torch.no_grad():
            noise = torch.empty(module.weight.shape, dtype=torch.float64)
            noise.normal_(0.0, std, generator=gen)
            module.weight.copy_(noise)
            if module.bias is not None:
                module.bias.zero_()
    head = getattr(model, "head", None)
    if head is not None:
        with torch.no_grad():
            head.weight *= HEAD_INIT_SCALE


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_breakdown(model: nn.Module) -> list:
    """Per-parameter (name, shape, scalar count), in registration order."""
    return [(name, tuple(p.shape), p.numel()) for name, p in model.named_parameters()]
