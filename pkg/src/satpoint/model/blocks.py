"""Shared convolutional building blocks."""

import torch.nn as nn


class ConvBlock(nn.Module):
    """Conv + batch norm + optional ReLU, spatial size preserved."""

    def __init__(self, in_channels, out_channels, kernel_size=3, relu=True):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size,
            padding=kernel_size // 2, bias=False,
        )
        self.bn = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True) if relu else None

    def forward(self, x):
        x = self.bn(self.conv(x))
        if self.relu is not None:
            x = self.relu(x)
        return x


class ResidualBlock(nn.Module):
    """Two 3x3 conv+BN layers with an identity (or 1x1-projected) skip."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.body = nn.Sequential(
            ConvBlock(in_channels, out_channels, relu=True),
            ConvBlock(out_channels, out_channels, relu=False),
        )
        if in_channels != out_channels:
            self.project = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        else:
            self.project = None
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        skip = x if self.project is None else self.project(x)
        return self.relu(self.body(x) + skip)
