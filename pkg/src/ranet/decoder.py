"""Merge module and three-level pyramid decoder."""
from __future__ import annotations

from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeaturePyramid, conv_block


class MergeModule(nn.Module):
    """Refine the FG and BG streams with one shared block, append the prior mask, fuse."""

    def __init__(self, in_channels: int, channels: int = 128):
        super().__init__()
        self.refine = nn.Sequential(conv_block(in_channels, channels), conv_block(channels, channels))
        self.fuse_conv = nn.Conv2d(2 * channels + 1, channels, 3, padding=1)
        self.fuse_act = nn.Sequential(nn.InstanceNorm2d(channels), nn.ReLU())
        self.out_channels = channels

    def streams(self, fg: torch.Tensor, bg: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.refine(fg), self.refine(bg)

    def pre_fusion(self, fg: torch.Tensor, bg: torch.Tensor, prev_mask: torch.Tensor) -> torch.Tensor:
        if not (fg.shape[-2:] == bg.shape[-2:] == prev_mask.shape[-2:]):
            raise ValueError(
                f"spatial mismatch: fg {tuple(fg.shape[-2:])}, bg {tuple(bg.shape[-2:])}, "
                f"prior mask {tuple(prev_mask.shape[-2:])}")
        rf, rb = self.streams(fg, bg)
        return self.fuse_conv(torch.cat([rf, rb, prev_mask], dim=1))

    def forward(self, fg: torch.Tensor, bg: torch.Tensor, prev_mask: torch.Tensor) -> torch.Tensor:
        return self.fuse_act(self.pre_fusion(fg, bg, prev_mask))


def merge(fg: torch.Tensor, bg: torch.Tensor, prev_mask: torch.Tensor, module: MergeModule) -> torch.Tensor:
    """(B, T, H, W) x2 + (B, 1, H, W) -> (B, M, H, W)."""
    return module(fg, bg, prev_mask)


class Decoder(nn.Module):
    """Three stages at strides 8, 4 and 2, then a 2-channel head upsampled to frame size.

    Stage 1 fuses the merged feature with the reduced stride-8 and (upsampled)
    stride-16 levels, stage 2 with the reduced stride-4 level, stage 3 only
    refines. Output channel 0 is the foreground logit, channel 1 background.
    """

    def __init__(self, merged_channels: int = 128, skip_channels: Sequence[int] = (32, 64, 128),
                 widths: Sequence[int] = (128, 64, 32)):
        super().__init__()
        reduced = [c // 4 for c in skip_channels]
        self.skips = nn.ModuleList(nn.Sequential(nn.Conv2d(c, r, 1), nn.ReLU()) for c, r in
                                   zip(skip_channels, reduced))
        w1, w2, w3 = widths
        self.stage1 = conv_block(merged_channels + reduced[1] + reduced[2], w1)
        self.stage2 = conv_block(w1 + reduced[0], w2)
        self.stage3 = conv_block(w2, w3)
        self.head = nn.Conv2d(w3, 2, 1)

    def forward(self, merged: torch.Tensor, skips: FeaturePyramid, out_size) -> torch.Tensor:
        return decode(merged, skips, self, out_size)


def decode(merged: torch.Tensor, skips: FeaturePyramid, dec: Decoder, out_size) -> torch.Tensor:
    s4, s8, s16 = (proj(lvl) for proj, lvl in zip(dec.skips, skips.levels))
    size8 = merged.shape[-2:]
    x = dec.stage1(torch.cat([merged, s8, F.interpolate(s16, size=size8, mode="bilinear",
                                                        align_corners=False)], dim=1))
    x = F.interpolate(x, size=s4.shape[-2:], mode="bilinear", align_corners=False)
    x = dec.stage2(torch.cat([x, s4], dim=1))
    x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    x = dec.stage3(x)
    logits = F.interpolate(dec.head(x), size=tuple(out_size), mode="bilinear", align_corners=False)
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite decoder logits")
    return logits


def binary_logit(logits: torch.Tensor) -> torch.Tensor:
    """Foreground-vs-background logit (B, H, W) from the 2-channel decoder output."""
    return logits[:, 0] - logits[:, 1]
