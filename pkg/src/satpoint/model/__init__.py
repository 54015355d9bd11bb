"""Network components: attention stem gate, guided upsampling, stacked
hourglass localizer, and the focal training loss."""

from .attention import DualContextAttention, MultiScaleContext, LocalContrast, channel_pool, local_deviation
from .blocks import ConvBlock, ResidualBlock
from .hourglass import Hourglass, ModelConfig, PointLocalizer, UPSAMPLER_KINDS
from .loss import center_focal_loss
from .upsample import DeformableConv3x3, GuidedUpsampler, HighPassConv, bilinear_sample

__all__ = [
    "DualContextAttention",
    "MultiScaleContext",
    "LocalContrast",
    "channel_pool",
    "local_deviation",
    "ConvBlock",
    "ResidualBlock",
    "Hourglass",
    "ModelConfig",
    "PointLocalizer",
    "UPSAMPLER_KINDS",
    "center_focal_loss",
    "DeformableConv3x3",
    "GuidedUpsampler",
    "HighPassConv",
    "bilinear_sample",
]
