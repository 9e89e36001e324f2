"""RANet assembly, architecture config and checkpoint files."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .decoder import Decoder, MergeModule, decode
from .encoder import TOTAL_STRIDE, Backbone, FeaturePyramid, MatchingHead, extract_pyramid, reduce_and_merge
from .matching import correlate_batch
from .ram import RankingAttention

CHECKPOINT_VERSION = "ranet-ckpt/1"
VARIANTS = ("ram", "no_ranking", "maximum", "no_correlation")


@dataclass(frozen=True)
class ModelConfig:
    input_size: Tuple[int, int] = (96, 160)
    stem_channels: int = 16
    encoder_channels: Tuple[int, int, int] = (32, 64, 128)
    merge_mode: str = "sum"
    target_channels: int = 256
    score_hidden: int = 64
    score_gate: bool = True
    merge_channels: int = 128
    decoder_channels: Tuple[int, int, int] = (128, 64, 32)
    variant: str = "ram"
    zero_prior: bool = False
    background_logit: str = "mean"   # multi-object background score: mean | max
    size_policy: str = "error"       # frames not matching input_size: error | resize

    def __post_init__(self):
        h, w = self.input_size
        if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
            raise ValueError(f"input_size {self.input_size} must be divisible by {TOTAL_STRIDE}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.background_logit not in ("mean", "max"):
            raise ValueError(f"unknown background_logit {self.background_logit!r}")
        if self.size_policy not in ("error", "resize"):
            raise ValueError(f"unknown size_policy {self.size_policy!r}")
        if self.target_channels <= 0:
            raise ValueError("target_channels must be positive")

    @property
    def feature_size(self) -> Tuple[int, int]:
        return self.input_size[0] // 8, self.input_size[1] // 8

    @property
    def template_cells(self) -> int:
        h, w = self.feature_size
        return h * w

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict) -> "ModelConfig":
        d = dict(d)
        for key in ("input_size", "encoder_channels", "decoder_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def downsample_prior(prev_mask: torch.Tensor, size) -> torch.Tensor:
    """Area-average a (B, H, W) soft mask to ``size`` and threshold at 0.5 -> (B, 1, h, w)."""
    pooled = F.adaptive_avg_pool2d(prev_mask.unsqueeze(1), size)
    return (pooled > 0.5).to(prev_mask.dtype)


class RANet(nn.Module):
    """Siamese encoder, correlation + RAM, merge module and pyramid decoder.

    The ``no_correlation`` variant replaces correlation and RAM by a single
    convolution over [current feature, masked template feature, template mask].
    """

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.stem_channels, config.encoder_channels)
        self.matcher = MatchingHead(config.encoder_channels, config.merge_mode)
        c = self.matcher.out_channels
        if config.variant == "no_correlation":
            self.concat_fusion = nn.Conv2d(2 * c + 1, config.target_channels, 3, padding=1)
            stream_channels = config.target_channels
        else:
            self.ram = RankingAttention(config.variant, config.template_cells, config.target_channels,
                                        config.score_hidden, config.score_gate)
            stream_channels = self.ram.out_channels
        self.merge = MergeModule(stream_channels, config.merge_channels)
        self.decoder = Decoder(config.merge_channels, config.encoder_channels, config.decoder_channels)
        self.last_prior: Optional[torch.Tensor] = None
        self.last_info: List[Dict] = []

    # -- encoder ---------------------------------------------------------
    def encode(self, frames: torch.Tensor) -> Tuple[FeaturePyramid, torch.Tensor]:
        """(B, 3, H, W) -> pyramid and l2-normalised matching feature."""
        pyramid = extract_pyramid(frames, self.backbone)
        return pyramid, reduce_and_merge(pyramid, self.matcher)

    # -- per-object streams ----------------------------------------------
    def streams(self, similarity: Optional[torch.Tensor], template_feat: torch.Tensor,
                current_feat: torch.Tensor, template_mask: torch.Tensor):
        """FG and BG blocks for a batch; ``template_mask`` is (B, h, w) at feature resolution."""
        if self.config.variant == "no_correlation":
            m = template_mask.unsqueeze(1).to(current_feat.dtype)
            fg = self.concat_fusion(torch.cat([current_feat, template_feat * m, m], dim=1))
            bg = self.concat_fusion(torch.cat([current_feat, template_feat * (1 - m), 1 - m], dim=1))
            return fg, bg
        shape = tuple(template_feat.shape[-2:])
        fgs, bgs, infos = [], [], []
        for b in range(similarity.shape[0]):
            fg, bg, info = self.ram(similarity[b], template_mask[b], shape)
            fgs.append(fg)
            bgs.append(bg)
            infos.append(info)
        self.last_info = infos
        return torch.stack(fgs), torch.stack(bgs)

    def prior_channel(self, prev_mask: torch.Tensor, size) -> torch.Tensor:
        prior = downsample_prior(prev_mask, size)
        if self.config.zero_prior:
            prior = torch.zeros_like(prior)
        self.last_prior = prior.detach()
        return prior

    def head(self, fg, bg, prev_mask, pyramid: FeaturePyramid, out_size) -> torch.Tensor:
        prior = self.prior_channel(prev_mask, fg.shape[-2:])
        merged = self.merge(fg, bg, prior)
        return decode(merged, pyramid, self.decoder, out_size)

    def forward(self, template_img: torch.Tensor, template_mask: torch.Tensor,
                current_img: torch.Tensor, prev_mask: torch.Tensor) -> torch.Tensor:
        """Training forward pass; returns (B, 2, H, W) logits.

        ``template_mask`` is a binary (B, H, W) full-resolution mask,
        ``prev_mask`` a soft (B, H, W) mask of the previous frame.
        """
        _, t_feat = self.encode(template_img)
        pyramid, c_feat = self.encode(current_img)
        tmask = downsample_nearest(template_mask, t_feat.shape[-2:])
        sim = None if self.config.variant == "no_correlation" else correlate_batch(t_feat, c_feat)
        fg, bg = self.streams(sim, t_feat, c_feat, tmask)
        return self.head(fg, bg, prev_mask, pyramid, current_img.shape[-2:])


def downsample_nearest(mask: torch.Tensor, size) -> torch.Tensor:
    """Cell-centre nearest-neighbour sampling of (B, H, W) masks."""
    h, w = mask.shape[-2:]
    ys = torch.floor((torch.arange(size[0], dtype=torch.float64) + 0.5) * h / size[0]).long()
    xs = torch.floor((torch.arange(size[1], dtype=torch.float64) + 0.5) * w / size[1]).long()
    return mask[:, ys][:, :, xs]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named parameter arrays, the architecture config, progress and loss history."""

    state: Dict[str, np.ndarray]
    config: ModelConfig
    iteration: int = 0
    loss_history: List[float] = field(default_factory=list)
    extra: Dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: RANet, iteration: int = 0, loss_history: Sequence[float] = (),
                   extra: Optional[Dict] = None) -> "Checkpoint":
        state = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(state, model.config, iteration, list(loss_history), dict(extra or {}))

    def to_model(self, dtype: torch.dtype = torch.float32) -> RANet:
        model = RANet(self.config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.state.items()})
        return model.to(dtype)

    def copy(self) -> "Checkpoint":
        return copy.deepcopy(self)

    def save(self, path) -> Path:
        path = Path(path)
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "iteration": self.iteration,
            "loss_history": self.loss_history,
            "extra": self.extra,
        }
        arrays = {f"param/{k}": v for k, v in self.state.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
            state = {k[len("param/"):]: archive[k] for k in archive.files if k.startswith("param/")}
        return cls(state, ModelConfig.from_dict(meta["config"]), meta["iteration"],
                   list(meta["loss_history"]), meta.get("extra", {}))
