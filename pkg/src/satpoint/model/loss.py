"""Penalty-reduced focal loss for dense localization maps.

Annotated center pixels contribute (1 - p)^2 * log(p); every other pixel
contributes (1 - y)^4 * p^2 * log(1 - p), where y is the target map value
acting as a penalty reduction near centers. The negated sum is averaged by
the number of centers, not by pixel count, so sparse scenes keep usable
gradient scale.
"""

import torch


def center_focal_loss(pred, target, centers, eps=1e-6):
    """Focal loss between a predicted map and its target.

    pred, target: broadcast-compatible tensors with values in [0, 1];
    centers: boolean tensor, True exactly at annotated pixels. For batched
    inputs the divisor is the total center count across the batch.
    """
    if centers.dtype != torch.bool:
        centers = centers.bool()
    n = centers.sum()
    if int(n) == 0:
        raise ValueError("no annotated centers in batch")
    p = pred.clamp(eps, 1.0 - eps)
    pos = (1.0 - p) ** 2 * torch.log(p)
    neg = (1.0 - target) ** 4 * p ** 2 * torch.log(1.0 - p)
    summed = torch.where(centers.expand_as(pos), pos, neg).sum()
    return -summed / n.to(pred.dtype)
