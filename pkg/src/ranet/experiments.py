"""Desk-scale training and ablation protocol on synthetic videos.

Everything here is seeded: the training stills, the training videos and the
10-video evaluation set are fixed, and each model seed fixes initialisation
and sampling.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data.augment import AugmentRanges
from .data.synth import SynthConfig, generate_synthetic_video
from .data.types import VideoSequence
from .metrics import evaluate
from .model import Checkpoint, ModelConfig
from .segmenter import Segmenter
from .training import TrainConfig, apply_ablation, online_finetune, train_pipeline

# Variant name -> ablation flags.
VARIANT_FLAGS: Dict[str, Tuple[str, ...]] = {
    "w/ RAM": (),
    "w/o Ranking": ("w/o Ranking",),
    "Maximum": ("Maximum",),
    "-CL": ("-CL",),
    "-PM": ("-PM",),
    "-IP": ("-IP",),
    "-VF": ("-VF",),
}

DESK_SIZE = (96, 160)
DESK_MODEL = ModelConfig(
    input_size=DESK_SIZE,
    stem_channels=8,
    encoder_channels=(16, 32, 64),
    score_hidden=32,
    merge_channels=64,
    decoder_channels=(64, 32, 16),
)
DESK_TRAIN = TrainConfig(
    lr=1e-3,
    online_lr=1e-4,
    batch_size=4,
    pretrain_iters=600,
    finetune_iters=600,
    augment=AugmentRanges(),
)


def synth_base(size=DESK_SIZE, **kw) -> SynthConfig:
    return SynthConfig(height=size[0], width=size[1], **kw)


def training_stills(n: int = 200, size=DESK_SIZE, seed: int = 10_000) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(image, label map) pairs: first frames of random one- or two-object scenes."""
    stills = []
    for i in range(n):
        cfg = synth_base(size, n_objects=1 + i % 2, length=1, seed=seed + i)
        video = generate_synthetic_video(cfg)
        stills.append((video.frames[0], video.masks[0]))
    return stills


def training_videos(n: int = 30, size=DESK_SIZE, length: int = 12, seed: int = 20_000) -> List[VideoSequence]:
    return [generate_synthetic_video(synth_base(size, length=length, occluder_prob=0.3, motion=2.5, seed=seed + i))
            for i in range(n)]


def eval_videos(n: int = 10, size=DESK_SIZE, length: int = 12, seed: int = 30_000) -> List[VideoSequence]:
    """The fixed evaluation set: single-object videos, some crossed by an occluder."""
    return [generate_synthetic_video(synth_base(size, length=length, occluder_prob=0.4, motion=2.5, seed=seed + i))
            for i in range(n)]


def train_variant(variant: str, seed: int, model_cfg: ModelConfig = DESK_MODEL,
                  train_cfg: TrainConfig = DESK_TRAIN, stills=None, videos=None) -> Checkpoint:
    flags = VARIANT_FLAGS[variant]
    cfg = replace(train_cfg, ablations=flags, seed=seed)
    stills = training_stills(size=model_cfg.input_size) if stills is None else stills
    videos = training_videos(size=model_cfg.input_size) if videos is None else videos
    return train_pipeline(stills, videos, apply_ablation(model_cfg, flags), cfg).final


def evaluate_checkpoint(checkpoint: Checkpoint, videos: Sequence[VideoSequence],
                        online_iters: int = 0, train_cfg: TrainConfig = DESK_TRAIN,
                        seed: int = 0) -> Dict:
    preds, annos = {}, {}
    for k, video in enumerate(videos):
        model = online_finetune(checkpoint, video.frames[0], video.masks[0], online_iters, train_cfg,
                                seed=seed * 1000 + k)
        preds[video.name] = Segmenter(model).segment_video(video)
        annos[video.name] = video.masks
    return evaluate(preds, annos)


@dataclass
class AblationRow:
    variant: str
    seeds: List[int]
    j_means: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.j_means))


def run_ablation(variants: Sequence[str], seeds: Sequence[int], model_cfg: ModelConfig = DESK_MODEL,
                 train_cfg: TrainConfig = DESK_TRAIN, eval_set: Optional[List[VideoSequence]] = None,
                 checkpoints: Optional[Dict] = None) -> List[AblationRow]:
    """J Mean on the eval set for every (variant, seed). Trained checkpoints land in ``checkpoints``."""
    eval_set = eval_videos(size=model_cfg.input_size) if eval_set is None else eval_set
    stills = training_stills(size=model_cfg.input_size)
    videos = training_videos(size=model_cfg.input_size)
    rows = []
    for variant in variants:
        scores = []
        for seed in seeds:
            ckpt = train_variant(variant, seed, model_cfg, train_cfg, stills, videos)
            if checkpoints is not None:
                checkpoints[(variant, seed)] = ckpt
            report = evaluate_checkpoint(ckpt, eval_set, train_cfg=train_cfg)
            scores.append(report["global"]["J"]["mean"])
        rows.append(AblationRow(variant, list(seeds), scores))
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path) -> Path:
    """One row per metric, one column per variant, in the layout of the ablation tables."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Variant"] + [r.variant for r in rows])
        writer.writerow(["J Mean"] + [f"{100 * r.mean:.1f}" for r in rows])
        for i, seed in enumerate(rows[0].seeds if rows else []):
            writer.writerow([f"J Mean (seed {seed})"] + [f"{100 * r.j_means[i]:.1f}" for r in rows])
    return path
