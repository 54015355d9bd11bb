"""Learnable 2x upsampling guided by high-frequency content.

The coarse decoder feature is first upsampled bilinearly, then boosted
where a learnable high-pass filter finds detail (multiplicative gain in
(1, 2)), aligned to the encoder skip by a deformable 3x3 convolution whose
offsets are predicted from both features, and finally blended into the
skip through a sigmoid gate. The deformable sampling is written out
explicitly (gather + bilinear interpolation) so it runs anywhere torch
does and stays exact under float64 for finite-difference checks.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

# 3x3 tap displacements in row-major order; offset channel k covers tap k.
TAP_OFFSETS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]


class HighPassConv(nn.Module):
    """Depthwise 3x3 sharpening filter with replicate padding.

    Initialized to center 1, surround -1/8, so each channel's kernel sums
    to zero and constant inputs map to exactly zero. The weights stay
    learnable afterwards.
    """

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, groups=channels, bias=False)
        with torch.no_grad():
            kernel = torch.full((3, 3), -1.0 / 8.0)
            kernel[1, 1] = 1.0
            self.conv.weight.copy_(kernel.expand(channels, 1, 3, 3))

    def forward(self, x):
        return self.conv(F.pad(x, (1, 1, 1, 1), mode="replicate"))


def bilinear_sample(x, rows, cols):
    """Sample x at fractional (row, col) positions with border replication.

    x: (B, C, H, W); rows, cols: (B, H, W) in pixel units. Returns a
    (B, C, H, W) tensor that is differentiable in both x and the positions.
    """
    b, c, h, w = x.shape
    r0 = rows.floor()
    c0 = cols.floor()
    fr = (rows - r0).unsqueeze(1)
    fc = (cols - c0).unsqueeze(1)
    r0 = r0.long()
    c0 = c0.long()
    r1 = (r0 + 1).clamp(0, h - 1)
    c1 = (c0 + 1).clamp(0, w - 1)
    r0 = r0.clamp(0, h - 1)
    c0 = c0.clamp(0, w - 1)

    flat = x.reshape(b, c, h * w)

    def grab(rr, cc):
        idx = (rr * w + cc).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = (1.0 - fc) * grab(r0, c0) + fc * grab(r0, c1)
    bottom = (1.0 - fc) * grab(r1, c0) + fc * grab(r1, c1)
    return (1.0 - fr) * top + fr * bottom


class DeformableConv3x3(nn.Module):
    """3x3 convolution whose taps shift by learned per-pixel offsets.

    `offsets` carries 18 channels, interpreted as (row, col) displacement
    pairs for the 9 taps in row-major order. Samples falling outside the
    grid clamp to the border.
    """

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 3, 3))
        self.bias = nn.Parameter(torch.empty(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1.0 / math.sqrt(in_channels * 9)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x, offsets):
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        if offsets.shape != (b, 18, h, w):
            raise ValueError(
                f"offsets must be (batch, 18, {h}, {w}), got {tuple(offsets.shape)}"
            )
        offs = offsets.reshape(b, 9, 2, h, w)
        base_r = torch.arange(h, device=x.device, dtype=x.dtype).view(1, h, 1)
        base_c = torch.arange(w, device=x.device, dtype=x.dtype).view(1, 1, w)

        taps = []
        for k, (dr, dc) in enumerate(TAP_OFFSETS):
            rows = base_r + dr + offs[:, k, 0]
            cols = base_c + dc + offs[:, k, 1]
            taps.append(bilinear_sample(x, rows, cols))
        stacked = torch.stack(taps, dim=2).reshape(b, c * 9, h, w)
        kernel = self.weight.reshape(self.out_channels, c * 9)
        out = torch.einsum("bkhw,ok->bohw", stacked, kernel)
        return out + self.bias.view(1, -1, 1, 1)


class GuidedUpsampler(nn.Module):
    """Fuse a coarse decoder feature into its 2x-larger encoder skip."""

    def __init__(self, channels):
        super().__init__()
        self.channels = channels
        self.high_pass = HighPassConv(channels)
        self.compensation = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.Sigmoid(),
        )
        self.offset_net = nn.Sequential(
            nn.Conv2d(2 * channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, 18, 3, padding=1),
        )
        self.align = DeformableConv3x3(channels, channels)
        self.fusion_gate = nn.Conv2d(2 * channels, channels, 1)
        nn.init.zeros_(self.compensation[-2].bias)
        nn.init.zeros_(self.fusion_gate.bias)

    def detail_gain(self, upsampled):
        """Multiplicative detail boost minus one; strictly inside (0, 1)."""
        return self.compensation(self.high_pass(upsampled))

    def fusion_weight(self, boosted, fine):
        """Per-pixel blend weight for the aligned coarse path, in (0, 1)."""
        return torch.sigmoid(self.fusion_gate(torch.cat([boosted, fine], dim=1)))

    def forward(self, coarse, fine):
        if coarse.shape[1] != self.channels or fine.shape[1] != self.channels:
            raise ValueError(
                f"expected {self.channels}-channel features, got "
                f"{coarse.shape[1]} (coarse) and {fine.shape[1]} (fine)"
            )
        ch, cw = coarse.shape[-2:]
        if fine.shape[-2:] != (2 * ch, 2 * cw):
            raise ValueError(
                f"fine feature must be exactly 2x the coarse size, got "
                f"{tuple(fine.shape[-2:])} vs {(ch, cw)}"
            )
        up = F.interpolate(coarse, scale_factor=2.0, mode="bilinear",
                           align_corners=False)
        boosted = up * (1.0 + self.detail_gain(up))
        offsets = self.offset_net(torch.cat([boosted, fine], dim=1))
        aligned = self.align(boosted, offsets)
        return self.fusion_weight(boosted, fine) * aligned + fine
