"""Ranking Attention Module.

Similarity maps are split by the template mask into a foreground and a
background set. Each map gets a score (learned two-layer net plus the map's
global maximum); maps are sorted by score, the best ``T`` are kept and the
block is zero-padded to exactly ``T`` channels so a fixed-width decoder can
consume a variable number of maps.

Sorting is a hard permutation. Gradients reach the kept maps' values and,
through the score gate, the scoring network; the ordering itself is constant
within a step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn

from .matching import reshape_for_ram

VARIANTS = ("ram", "no_ranking", "maximum")


@dataclass
class FilteredSimilarity:
    fg: torch.Tensor
    bg: torch.Tensor


@dataclass
class RankedFeatureBlock:
    """(T, H, W) block; channels past ``len(selected_indices)`` are zero."""

    features: torch.Tensor
    selected_indices: torch.Tensor
    selected_scores: torch.Tensor = field(default_factory=lambda: torch.zeros(0))


def split_fg_bg(S: torch.Tensor, template_mask: torch.Tensor) -> FilteredSimilarity:
    """Zero the channels of background (fg side) or foreground (bg side) template pixels."""
    n = S.shape[0]
    if template_mask.numel() != n:
        raise ValueError(f"template mask has {template_mask.numel()} cells for {n} similarity maps")
    m = template_mask.reshape(n, 1, 1).to(S.dtype)
    return FilteredSimilarity(fg=S * m, bg=S * (1 - m))


class ScoreNet(nn.Module):
    """f_n: two 3x3 convolutions over the (H*W, H0, W0) score plane, H*W -> hidden -> 1."""

    def __init__(self, in_channels: int, hidden: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)

    def forward(self, s_hat: torch.Tensor) -> torch.Tensor:
        return self.conv2(torch.relu(self.conv1(s_hat)))


def ranking_scores(S_hat: torch.Tensor, scorer: Optional[nn.Module]) -> torch.Tensor:
    """Score plane (H0, W0): scorer(S_hat) + per-template-pixel max over the current frame."""
    f_max = S_hat.amax(dim=0)
    if scorer is None:
        return f_max
    return scorer(S_hat.unsqueeze(0))[0, 0] + f_max


def rank_select_pad(S_filtered: torch.Tensor, scores: torch.Tensor, T: int,
                    eligible: torch.Tensor) -> RankedFeatureBlock:
    """Sort eligible maps by descending score, keep the first ``T``, pad with zero maps.

    Ties go to the lower template-pixel index.
    """
    if T <= 0:
        raise ValueError(f"channel budget must be positive, got {T}")
    n, h, w = S_filtered.shape
    scores = scores.reshape(-1)
    idx = torch.nonzero(eligible.reshape(-1) > 0, as_tuple=False).reshape(-1)
    order = torch.sort(scores.detach()[idx], descending=True, stable=True).indices
    chosen = idx[order[:T]]
    out = S_filtered.new_zeros((T, h, w))
    k = chosen.numel()
    if k:
        out = torch.cat([S_filtered.index_select(0, chosen), out[k:]], dim=0)
    return RankedFeatureBlock(features=out, selected_indices=chosen,
                              selected_scores=scores.index_select(0, chosen))


def maximum_map(S_filtered: torch.Tensor, eligible: torch.Tensor) -> torch.Tensor:
    """Channel-wise max over eligible maps -> (1, H, W); zeros when none are eligible."""
    idx = torch.nonzero(eligible.reshape(-1) > 0, as_tuple=False).reshape(-1)
    if idx.numel() == 0:
        return S_filtered.new_zeros((1,) + S_filtered.shape[1:])
    return S_filtered.index_select(0, idx).amax(dim=0, keepdim=True)


class RankingAttention(nn.Module):
    """FG/BG filtering plus one of three map-organisation strategies.

    ``ram``         rank-select-pad to ``target_channels`` (gated by sigmoid(score))
    ``no_ranking``  keep all H0*W0 maps in template order, other side zeroed
    ``maximum``     one channel-wise max map per side
    """

    def __init__(self, variant: str = "ram", template_cells: int = 240, target_channels: int = 256,
                 hidden: int = 64, gate: bool = True):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown RAM variant {variant!r}")
        self.variant = variant
        self.target_channels = target_channels
        self.gate = gate
        self.record = False  # fill per-side selection info on every forward
        if variant == "ram":
            if target_channels <= 0:
                raise ValueError(f"channel budget must be positive, got {target_channels}")
            self.fg_scorer = ScoreNet(template_cells, hidden)
            self.bg_scorer = ScoreNet(template_cells, hidden)
        self.out_channels = {"ram": target_channels, "no_ranking": template_cells, "maximum": 1}[variant]

    def forward(self, S: torch.Tensor, template_mask: torch.Tensor,
                template_shape: Tuple[int, int]) -> Tuple[torch.Tensor, torch.Tensor, Dict]:
        """One sample: S (H0*W0, H, W) -> fg block, bg block, debug info."""
        split = split_fg_bg(S, template_mask)
        fg_elig = template_mask.reshape(-1) > 0
        bg_elig = ~fg_elig
        if self.variant == "no_ranking":
            return split.fg, split.bg, {}
        if self.variant == "maximum":
            return maximum_map(split.fg, fg_elig), maximum_map(split.bg, bg_elig), {}
        blocks, info = [], {}
        for side, filtered, elig, scorer in (("fg", split.fg, fg_elig, self.fg_scorer),
                                             ("bg", split.bg, bg_elig, self.bg_scorer)):
            s_hat = reshape_for_ram(filtered, template_shape)
            scores = ranking_scores(s_hat, scorer).reshape(-1)
            block = rank_select_pad(filtered, scores, self.target_channels, elig)
            feats = block.features
            k = block.selected_indices.numel()
            if self.gate and k:
                gate = torch.sigmoid(block.selected_scores).reshape(k, 1, 1)
                feats = torch.cat([feats[:k] * gate, feats[k:]], dim=0)
            blocks.append(feats)
            if self.record:
                info[side] = {"selected_indices": block.selected_indices.tolist(),
                              "scores": scores.detach()[block.selected_indices].tolist()}
        return blocks[0], blocks[1], info
