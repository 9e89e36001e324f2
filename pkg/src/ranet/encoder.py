"""Siamese feature extraction.

A small instance-normalised convolutional backbone yields a three-level
pyramid (strides 4, 8, 16). The levels are reduced four-fold in channels,
resized to the middle level and merged into one l2-normalised matching
feature. Template and current frames go through the very same module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

L2_EPS = 1e-8
TOTAL_STRIDE = 16


def conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.InstanceNorm2d(cout, eps=1e-5, affine=False),
        nn.ReLU(inplace=False),
    )


def l2_normalize(x: torch.Tensor, dim: int = 1, eps: float = L2_EPS) -> torch.Tensor:
    """Unit-norm columns along ``dim``; all-zero columns stay zero."""
    return x / x.norm(dim=dim, keepdim=True).clamp_min(eps)


@dataclass
class FeaturePyramid:
    """Encoder levels at strides 4, 8 and 16, each (B, C, h, w)."""

    levels: List[torch.Tensor]

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.levels[i]

    def select(self, index) -> "FeaturePyramid":
        return FeaturePyramid([lvl[index] for lvl in self.levels])


class Backbone(nn.Module):
    """Stem (stride 2) then three stages of two conv blocks, each halving resolution."""

    def __init__(self, stem_channels: int = 16, channels: Sequence[int] = (32, 64, 128)):
        super().__init__()
        self.stem = conv_block(3, stem_channels, stride=2)
        stages = []
        cin = stem_channels
        for c in channels:
            stages.append(nn.Sequential(conv_block(cin, c, stride=2), conv_block(c, c)))
            cin = c
        self.stages = nn.ModuleList(stages)
        self.channels = tuple(channels)

    def forward(self, frame: torch.Tensor) -> FeaturePyramid:
        return extract_pyramid(frame, self)


def extract_pyramid(frame: torch.Tensor, backbone: Backbone) -> FeaturePyramid:
    """Run the backbone on (B, 3, H, W) frames; H and W must be multiples of 16."""
    h, w = frame.shape[-2:]
    if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
        raise ValueError(f"frame size {h}x{w} is not divisible by the total stride {TOTAL_STRIDE}")
    x = backbone.stem(frame)
    levels = []
    for stage in backbone.stages:
        x = stage(x)
        levels.append(x)
    return FeaturePyramid(levels)


def resize_to(x: torch.Tensor, size) -> torch.Tensor:
    """Area-average when shrinking, bilinear when growing."""
    h, w = x.shape[-2:]
    if (h, w) == tuple(size):
        return x
    if h >= size[0] and w >= size[1]:
        return F.adaptive_avg_pool2d(x, size)
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class MatchingHead(nn.Module):
    """Channel reduction (out = in / 4), resize to the middle level, merge, l2-normalise.

    ``merge="sum"`` zero-pads the narrower reduced levels up to the widest one
    and adds them; ``merge="concat"`` stacks them along channels.
    """

    def __init__(self, channels: Sequence[int] = (32, 64, 128), merge: str = "sum"):
        super().__init__()
        if merge not in ("sum", "concat"):
            raise ValueError(f"unknown merge mode {merge!r}")
        for c in channels:
            if c % 4:
                raise ValueError(f"level width {c} is not divisible by 4")
        self.reduced = tuple(c // 4 for c in channels)
        self.reducers = nn.ModuleList(nn.Conv2d(c, c // 4, 1) for c in channels)
        self.merge = merge
        self.out_channels = max(self.reduced) if merge == "sum" else sum(self.reduced)

    def reduce(self, pyramid: FeaturePyramid) -> List[torch.Tensor]:
        return [conv(lvl) for conv, lvl in zip(self.reducers, pyramid.levels)]

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        return reduce_and_merge(pyramid, self)


def reduce_and_merge(pyramid: FeaturePyramid, head: MatchingHead) -> torch.Tensor:
    """Matching feature (B, C, h, w) at the middle level's resolution, unit-norm per location."""
    size = pyramid.levels[1].shape[-2:]
    reduced = [resize_to(r, size) for r in head.reduce(pyramid)]
    if head.merge == "sum":
        width = head.out_channels
        merged = sum(F.pad(r, (0, 0, 0, 0, 0, width - r.shape[1])) for r in reduced)
    else:
        merged = torch.cat(reduced, dim=1)
    if not torch.isfinite(merged).all():
        raise FloatingPointError("non-finite values in the matching feature")
    return l2_normalize(merged, dim=1)


@dataclass
class TemplateBank:
    """Reshaped template features K (H0*W0, C) plus the object's template mask (H0, W0)."""

    K: torch.Tensor
    template_mask: torch.Tensor
    h0: int
    w0: int
    object_id: int = 1

    def __len__(self) -> int:
        return self.K.shape[0]


def downsample_mask(mask: np.ndarray, size) -> np.ndarray:
    """Nearest-neighbour sampling at cell centres: out[i, j] = mask[floor((i+.5)*sy), floor((j+.5)*sx)]."""
    mask = np.asarray(mask)
    h, w = mask.shape
    ys = np.floor((np.arange(size[0]) + 0.5) * h / size[0]).astype(np.int64)
    xs = np.floor((np.arange(size[1]) + 0.5) * w / size[1]).astype(np.int64)
    return mask[np.ix_(ys, xs)]


def build_template_bank(feature: torch.Tensor, full_mask: np.ndarray, object_id: int) -> TemplateBank:
    """Template bank for one object from a (C, H0, W0) feature of the template frame.

    ``object_id=0`` selects the background.
    """
    c, h0, w0 = feature.shape
    full_mask = np.asarray(full_mask)
    binary = full_mask == object_id
    if not binary.any():
        raise ValueError(f"object {object_id} is absent from the template mask")
    small = downsample_mask(binary, (h0, w0))
    K = feature.reshape(c, h0 * w0).t()
    tmask = torch.from_numpy(small.astype(np.float32)).to(feature.dtype)
    return TemplateBank(K=K, template_mask=tmask, h0=h0, w0=w0, object_id=object_id)
