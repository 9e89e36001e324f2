"""Loss, optimisation and the three training regimens.

* static-image pretraining: pairs faked from single annotated images
* video fine-tuning: template/current/prior triplets drawn from real sequences
* online fine-tuning: per-video adaptation on the annotated first frame

plus the ablation switches that rewire the model or skip a stage.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .data.augment import AugmentRanges
from .data.samples import make_static_pair, sample_training_triplet
from .data.types import TrainingSample, VideoSequence
from .decoder import binary_logit
from .model import Checkpoint, ModelConfig, RANet

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
STRUCTURAL_FLAGS = {"-CL": "no_correlation", "w/o Ranking": "no_ranking", "Maximum": "maximum"}
ABLATION_FLAGS = frozenset(STRUCTURAL_FLAGS) | {"-PM", "-IP", "-VF"}


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``checkpoint`` holds the last good parameters."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    online_lr: float = 1e-6
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 4
    pretrain_iters: int = 2000
    finetune_iters: int = 1000
    max_interval: int = 5
    lr_schedule: str = "constant"   # constant | cosine (per stage, down to lr_floor * lr)
    lr_floor: float = 0.1
    augment: AugmentRanges = AugmentRanges()
    ablations: Tuple[str, ...] = ()
    seed: int = 0
    snapshot_every: int = 100

    def __post_init__(self):
        if self.lr < 0 or self.online_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        validate_ablations(self.ablations)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and isinstance(d["augment"], dict):
            aug = dict(d["augment"])
            for key in ("scale", "crop_frac"):
                if key in aug:
                    aug[key] = tuple(aug[key])
            d["augment"] = AugmentRanges(**aug)
        for key in ("betas", "ablations"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def validate_ablations(flags: Sequence[str]) -> None:
    unknown = set(flags) - ABLATION_FLAGS
    if unknown:
        raise ConfigError(f"unknown ablation flags {sorted(unknown)}; known: {sorted(ABLATION_FLAGS)}")
    structural = [f for f in flags if f in STRUCTURAL_FLAGS]
    if len(structural) > 1:
        raise ConfigError(f"contradictory structural ablations {structural}: pick at most one")
    if "-IP" in flags and "-VF" in flags:
        raise ConfigError("-IP and -VF together leave no training stage")


def apply_ablation(model_cfg: ModelConfig, flags: Sequence[str]) -> ModelConfig:
    """Model wiring for a set of ablation flags (training-stage flags are ignored here)."""
    validate_ablations(flags)
    changes = {}
    for f in flags:
        if f in STRUCTURAL_FLAGS:
            changes["variant"] = STRUCTURAL_FLAGS[f]
    if "-PM" in flags:
        changes["zero_prior"] = True
    return replace(model_cfg, **changes)


# -- config files ----------------------------------------------------------------

def save_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Path:
    path = Path(path)
    payload = {"schema_version": CONFIG_SCHEMA_VERSION, "model": model_cfg.to_dict(),
               "train": train_cfg.to_dict()}
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_config(path) -> Tuple[ModelConfig, TrainConfig]:
    payload = json.loads(Path(path).read_text())
    version = payload.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported config schema_version {version!r}")
    return (ModelConfig.from_dict(payload.get("model", {})),
            TrainConfig.from_dict(payload.get("train", {})))


def write_loss_csv(path, history: Sequence[float]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, v in enumerate(history, start=1):
            writer.writerow([i, repr(float(v))])
    return path


# -- loss --------------------------------------------------------------------------

def bce_loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean binary cross-entropy of foreground logits against a binary target."""
    target = torch.as_tensor(target).to(logits.dtype)
    if logits.shape != target.shape:
        raise ValueError(f"logit shape {tuple(logits.shape)} != target shape {tuple(target.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    return F.binary_cross_entropy_with_logits(logits, target)


# -- training loop -------------------------------------------------------------------

def collate(samples: Sequence[TrainingSample], dtype=torch.float32):
    def imgs(key):
        return torch.from_numpy(np.stack([getattr(s, key) for s in samples])).permute(0, 3, 1, 2).to(dtype)

    def masks(key):
        return torch.from_numpy(np.stack([getattr(s, key) for s in samples]).astype(np.float32)).to(dtype)

    return (imgs("template_image"), masks("template_mask"), imgs("current_image"),
            masks("current_mask"), masks("prior_mask"))


def model_dtype(model: RANet) -> torch.dtype:
    return next(model.parameters()).dtype


def initial_model(model_cfg: ModelConfig, seed: int) -> RANet:
    torch.manual_seed(seed)
    return RANet(model_cfg)


def lr_factor(cfg: TrainConfig, it: int, iters: int) -> float:
    """Multiplier on the stage learning rate at step ``it`` of ``iters``."""
    if cfg.lr_schedule == "constant" or iters <= 1:
        return 1.0
    progress = min(it / (iters - 1), 1.0)
    return cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + math.cos(math.pi * progress))


def train_steps(model: RANet, sampler: Callable[[np.random.Generator], TrainingSample], iters: int,
                lr: float, cfg: TrainConfig, rng: np.random.Generator,
                history: Optional[List[float]] = None, start_iteration: int = 0) -> Checkpoint:
    """Run ``iters`` Adam steps in place on ``model`` and return the final checkpoint."""
    history = [] if history is None else history
    dtype = model_dtype(model)
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=cfg.betas, eps=cfg.eps,
                           weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda it: lr_factor(cfg, it, iters))
    model.train()
    good = Checkpoint.from_model(model, start_iteration, history)
    for it in range(iters):
        batch = collate([sampler(rng) for _ in range(cfg.batch_size)], dtype)
        t_img, t_mask, c_img, c_mask, prior = batch
        try:
            logits = binary_logit(model(t_img, t_mask, c_img, prior))
            loss = bce_loss(logits, c_mask)
        except (ValueError, FloatingPointError) as exc:
            raise TrainingDiverged(f"iteration {start_iteration + it}: {exc}", good) from exc
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"iteration {start_iteration + it}: loss is {loss.item()}", good)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        history.append(loss.item())
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            good = Checkpoint.from_model(model, start_iteration + it + 1, history)
            log.debug("iter %d loss %.4f", start_iteration + it + 1, history[-1])
    return Checkpoint.from_model(model, start_iteration + iters, history)


def _static_sampler(dataset, cfg: TrainConfig):
    def draw(rng):
        image, mask = dataset[int(rng.integers(len(dataset)))]
        return make_static_pair(image, mask, rng, ranges=cfg.augment)
    return draw


def pretrain_static(dataset: Sequence[Tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                    model_cfg: Optional[ModelConfig] = None,
                    checkpoint: Optional[Checkpoint] = None,
                    dtype: torch.dtype = torch.float32) -> Checkpoint:
    """Pretrain on (image, label map) stills. ``-IP`` returns the untrained initialisation."""
    if checkpoint is None:
        model = initial_model(apply_ablation(model_cfg or ModelConfig(), cfg.ablations), cfg.seed)
    else:
        model = checkpoint.to_model()
    model = model.to(dtype)
    if "-IP" in cfg.ablations:
        return Checkpoint.from_model(model, extra={"stage": "init"})
    if not dataset:
        raise ValueError("static pretraining needs at least one (image, mask) pair")
    rng = np.random.default_rng(cfg.seed)
    ckpt = train_steps(model, _static_sampler(dataset, cfg), cfg.pretrain_iters, cfg.lr, cfg, rng)
    ckpt.extra["stage"] = "pretrain"
    return ckpt


def finetune_video(videos: Sequence[VideoSequence], checkpoint: Checkpoint, cfg: TrainConfig,
                   dtype: torch.dtype = torch.float32) -> Checkpoint:
    """Fine-tune on video triplets (prior mask within ``max_interval`` frames). ``-VF`` skips."""
    if "-VF" in cfg.ablations:
        return checkpoint.copy()
    videos = [v for v in videos if len(v) >= 2 and v.fully_annotated]
    if not videos:
        raise ValueError("video fine-tuning needs fully annotated videos with >= 2 frames")
    model = checkpoint.to_model(dtype)
    rng = np.random.default_rng(cfg.seed + 1)

    def draw(r):
        video = videos[int(r.integers(len(videos)))]
        return sample_training_triplet(video, cfg.max_interval, r, ranges=cfg.augment)

    ckpt = train_steps(model, draw, cfg.finetune_iters, cfg.lr, cfg, rng,
                       history=list(checkpoint.loss_history), start_iteration=checkpoint.iteration)
    ckpt.extra["stage"] = "finetune"
    return ckpt


def online_finetune(checkpoint: Union[Checkpoint, RANet], first_frame: np.ndarray,
                    first_mask: np.ndarray, iters: int, cfg: TrainConfig, seed: int = 0) -> RANet:
    """A per-video copy of the model adapted to the annotated first frame.

    The input checkpoint (or model) is never modified.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if isinstance(checkpoint, Checkpoint):
        model = checkpoint.to_model()
    else:
        model = copy.deepcopy(checkpoint)
    if iters == 0:
        return model.eval()
    rng = np.random.default_rng(seed)

    def draw(r):
        return make_static_pair(first_frame, first_mask, r, ranges=cfg.augment)

    train_steps(model, draw, iters, cfg.online_lr, replace(cfg, snapshot_every=0), rng)
    return model.eval()


@dataclass
class PipelineResult:
    pretrained: Checkpoint
    final: Checkpoint
    stages: List[str] = field(default_factory=list)


def train_pipeline(stills: Sequence[Tuple[np.ndarray, np.ndarray]], videos: Sequence[VideoSequence],
                   model_cfg: ModelConfig, cfg: TrainConfig) -> PipelineResult:
    """Static pretraining followed by video fine-tuning, honouring -IP / -VF."""
    pre = pretrain_static(stills, cfg, model_cfg)
    final = finetune_video(videos, pre, cfg)
    stages = [s for s, flag in (("pretrain", "-IP"), ("finetune", "-VF")) if flag not in cfg.ablations]
    return PipelineResult(pre, final, stages)
