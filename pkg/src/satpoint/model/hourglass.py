"""Two-stage stacked hourglass localizer.

The stem keeps full resolution (stride-1 residual block from RGB to
`base_channels`) because the targets are only a few pixels wide; an
optional dual-context attention gate follows it. Each hourglass runs a
constant-width encoder/decoder pyramid whose decoder merges skips either
through the guided upsampler or plain bilinear-plus-add. Every stage ends
in a 1x1 conv + sigmoid head emitting a location map, and the stage-1
result is folded back into the features before stage 2.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import DualContextAttention
from .blocks import ConvBlock, ResidualBlock
from .upsample import GuidedUpsampler

UPSAMPLER_KINDS = ("deformable", "bilinear")


@dataclass
class ModelConfig:
    """Architecture switches; the defaults are the full model."""

    base_channels: int = 64
    hourglass_levels: int = 4
    stages: int = 2
    input_channels: int = 3
    attention: bool = True
    upsampler: str = "deformable"

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.hourglass_levels < 1:
            raise ValueError(f"hourglass_levels must be >= 1, got {self.hourglass_levels}")
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.upsampler not in UPSAMPLER_KINDS:
            raise ValueError(
                f"upsampler must be one of {UPSAMPLER_KINDS}, got {self.upsampler!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


def _upsample2x(x):
    return F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)


class Hourglass(nn.Module):
    """One recursive encoder/decoder pyramid at constant channel width."""

    def __init__(self, channels, levels, upsampler="deformable"):
        super().__init__()
        self.skip = ResidualBlock(channels, channels)
        self.down = ResidualBlock(channels, channels)
        if levels > 1:
            self.inner = Hourglass(channels, levels - 1, upsampler)
        else:
            self.inner = ResidualBlock(channels, channels)
        self.decode = ResidualBlock(channels, channels)
        self.fuse = GuidedUpsampler(channels) if upsampler == "deformable" else None

    def forward(self, x):
        skip = self.skip(x)
        low = self.down(F.max_pool2d(x, 2))
        low = self.decode(self.inner(low))
        if self.fuse is not None:
            return self.fuse(low, skip)
        return _upsample2x(low) + skip


class PointLocalizer(nn.Module):
    """Stacked hourglass network emitting one location map per stage."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config if config is not None else ModelConfig()
        c = self.config.base_channels
        self.stem = nn.Sequential(
            ConvBlock(self.config.input_channels, c),
            ResidualBlock(c, c),
        )
        self.attention = DualContextAttention() if self.config.attention else None
        stages = self.config.stages
        self.hourglasses = nn.ModuleList(
            Hourglass(c, self.config.hourglass_levels, self.config.upsampler)
            for _ in range(stages)
        )
        self.refiners = nn.ModuleList(ResidualBlock(c, c) for _ in range(stages))
        self.heads = nn.ModuleList(nn.Conv2d(c, 1, 1) for _ in range(stages))
        self.feature_remaps = nn.ModuleList(
            nn.Conv2d(c, c, 1) for _ in range(stages - 1)
        )
        self.output_remaps = nn.ModuleList(
            nn.Conv2d(1, c, 1) for _ in range(stages - 1)
        )

    def _check_input(self, x):
        if x.ndim != 4:
            raise ValueError(f"expected a (batch, C, H, W) tensor, got {x.ndim} dims")
        if x.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected {self.config.input_channels} input channels, got {x.shape[1]}"
            )
        factor = 2 ** self.config.hourglass_levels
        h, w = x.shape[-2:]
        if h % factor or w % factor:
            need_h = -(-h // factor) * factor
            need_w = -(-w // factor) * factor
            raise ValueError(
                f"input size {h}x{w} is not divisible by {factor} "
                f"(= 2^{self.config.hourglass_levels} pyramid levels); "
                f"pad to {need_h}x{need_w}"
            )

    def forward(self, x):
        """Returns one (B, 1, H, W) sigmoid map per stage; the last is decoded."""
        self._check_input(x)
        feat = self.stem(x)
        if self.attention is not None:
            feat = self.attention(feat)
        outputs = []
        for i in range(self.config.stages):
            refined = self.refiners[i](self.hourglasses[i](feat))
            out = torch.sigmoid(self.heads[i](refined))
            outputs.append(out)
            if i < self.config.stages - 1:
                feat = feat + self.feature_remaps[i](refined) + self.output_remaps[i](out)
        return outputs
