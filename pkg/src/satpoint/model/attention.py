"""Dual-context attention gate for the full-resolution stem features.

The gate looks at a 2-channel descriptor (per-pixel channel max and mean),
summarizes it through two dilated views plus a local-contrast branch, and
squashes the sum through a sigmoid. Multiplying the input by that gate
keeps small bright structures while damping flat context.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def channel_pool(x):
    """Per-pixel channel max and mean, stacked into 2 channels."""
    f_max = x.max(dim=1, keepdim=True).values
    f_mean = x.mean(dim=1, keepdim=True)
    return torch.cat([f_max, f_mean], dim=1)


def local_deviation(x):
    """|x - mean over its replicate-padded 3x3 neighborhood|, same size.

    Exactly zero on constant maps: border replication makes every window
    average equal the constant.
    """
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return (x - F.avg_pool2d(padded, 3, stride=1)).abs()


class MultiScaleContext(nn.Module):
    """Two dilated 3x3 views of the pooled descriptor, fused by a 1x1 conv."""

    def __init__(self):
        super().__init__()
        self.branch_near = nn.Conv2d(2, 1, 3, padding=2, dilation=2)
        self.branch_far = nn.Conv2d(2, 1, 3, padding=4, dilation=4)
        self.fuse = nn.Conv2d(2, 1, 1)

    def forward(self, pooled):
        merged = torch.cat([self.branch_near(pooled), self.branch_far(pooled)], dim=1)
        return self.fuse(merged)


class LocalContrast(nn.Module):
    """Learned refinement of the channel-max map's neighborhood deviation."""

    def __init__(self, hidden=8):
        super().__init__()
        self.refine = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )

    def forward(self, f_max):
        return self.refine(local_deviation(f_max))


class DualContextAttention(nn.Module):
    """Pixelwise sigmoid gate combining dilated context and local contrast."""

    def __init__(self):
        super().__init__()
        self.context = MultiScaleContext()
        self.contrast = LocalContrast()

    def gate(self, x):
        """The (0, 1) weight map, broadcastable over input channels."""
        pooled = channel_pool(x)
        return torch.sigmoid(self.context(pooled) + self.contrast(pooled[:, :1]))

    def forward(self, x):
        return self.gate(x) * x
