"""Training-sample construction for static-image pretraining and video fine-tuning."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .augment import AugmentRanges, augment, sample_params
from .types import DataError, TrainingSample, VideoSequence

MAX_RETRIES = 20


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _pick_object(mask: np.ndarray, rng: np.random.Generator, object_id: Optional[int]) -> int:
    labels = [int(v) for v in np.unique(mask) if v != 0]
    if not labels:
        raise DataError("mask has no foreground object")
    if object_id is None:
        return labels[rng.integers(len(labels))]
    if object_id not in labels:
        raise DataError(f"object {object_id} not present in mask (labels {labels})")
    return object_id


def _augment_nonempty(rng, image, mask, ranges, what):
    """Augment, resampling when the foreground is cropped or warped away."""
    for _ in range(MAX_RETRIES):
        params = sample_params(rng, mask.shape, ranges)
        out_img, out_mask = augment(image, mask, params)
        if out_mask.any():
            return out_img, out_mask
    raise DataError(f"{what}: augmentation erased the foreground {MAX_RETRIES} times in a row")


def make_static_pair(image: np.ndarray, mask: np.ndarray, seed=None,
                     ranges: AugmentRanges = AugmentRanges(),
                     prior_ranges: AugmentRanges = AugmentRanges.mild(),
                     object_id: Optional[int] = None) -> TrainingSample:
    """Fake a (template, current, prior) triplet from one still image.

    Template and current are independent augmentations of ``image``; the prior
    mask is a further mild augmentation of the current mask, standing in for an
    imperfect previous-frame prediction.
    """
    rng = _as_rng(seed)
    obj = _pick_object(mask, rng, object_id)
    binary = (mask == obj).astype(np.uint8)
    t_img, t_mask = _augment_nonempty(rng, image, binary, ranges, "template")
    c_img, c_mask = _augment_nonempty(rng, image, binary, ranges, "current")
    if prior_ranges == AugmentRanges.identity():
        prior = c_mask.copy()
    else:
        _, prior = _augment_nonempty(rng, None, c_mask, prior_ranges, "prior")
    return TrainingSample(t_img, t_mask, c_img, c_mask, prior, object_id=obj)


def sample_training_triplet(video: VideoSequence, max_interval: int = 5, seed=None,
                            ranges: AugmentRanges = AugmentRanges(),
                            object_id: Optional[int] = None) -> TrainingSample:
    """Random template/current frames plus the mask of a frame near the current one.

    The prior mask shares the current frame's geometric transform, so the only
    difference between prior and current masks is genuine object motion.
    """
    if len(video) < 2:
        raise DataError(f"{video.name}: need at least 2 frames to sample a triplet")
    if not video.fully_annotated:
        raise DataError(f"{video.name}: training triplets need masks on every frame")
    if max_interval < 0:
        raise DataError("max_interval must be >= 0")
    rng = _as_rng(seed)
    n = len(video)
    for _ in range(MAX_RETRIES):
        ti, ci = (int(i) for i in rng.integers(0, n, size=2))
        lo, hi = max(0, ci - max_interval), min(n - 1, ci + max_interval)
        pi = int(rng.integers(lo, hi + 1))
        template_mask = video.masks[ti]
        labels = [int(v) for v in np.unique(template_mask) if v != 0]
        if object_id is not None and object_id not in labels:
            continue
        if not labels:
            continue
        obj = object_id if object_id is not None else labels[rng.integers(len(labels))]
        if not (video.masks[ci] == obj).any():
            continue
        t_img, t_mask = augment(video.frames[ti], (template_mask == obj).astype(np.uint8),
                                sample_params(rng, video.size, ranges))
        params = sample_params(rng, video.size, ranges)
        c_img, c_mask = augment(video.frames[ci], (video.masks[ci] == obj).astype(np.uint8), params)
        _, prior = augment(None, (video.masks[pi] == obj).astype(np.uint8), params)
        if t_mask.any() and c_mask.any():
            return TrainingSample(t_img, t_mask, c_img, c_mask, prior, object_id=obj,
                                  indices=(ti, ci, pi))
    raise DataError(f"{video.name}: could not draw a triplet with visible foreground")
