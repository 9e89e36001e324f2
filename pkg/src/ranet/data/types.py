"""Containers shared by the data pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets, configs or samples."""


def check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or min(image.shape[:2]) <= 0:
        raise DataError(f"{name} must be HxWx3, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise DataError(f"{name} values must be finite and within [0, 1]")
    return image


def check_mask(mask: np.ndarray, shape: Tuple[int, int], name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise DataError(f"{name} has shape {mask.shape}, expected {tuple(shape)}")
    if not np.issubdtype(mask.dtype, np.integer):
        raise DataError(f"{name} must hold integer labels, got {mask.dtype}")
    return mask


@dataclass
class VideoSequence:
    """Frames (H, W, 3) float32 in [0, 1] plus optional label maps.

    ``masks`` has one entry per frame; unannotated frames are ``None``.
    Inference only needs ``masks[0]``.
    """

    frames: List[np.ndarray]
    masks: Optional[List[Optional[np.ndarray]]] = None
    name: str = "video"

    def __post_init__(self):
        if len(self.frames) < 1:
            raise DataError(f"{self.name}: a video needs at least one frame")
        shape = self.frames[0].shape[:2]
        for i, frame in enumerate(self.frames):
            check_image(frame, f"{self.name} frame {i}")
            if frame.shape[:2] != shape:
                raise DataError(f"{self.name}: frame {i} size {frame.shape[:2]} != {shape}")
        if self.masks is not None:
            if len(self.masks) != len(self.frames):
                raise DataError(
                    f"{self.name}: {len(self.masks)} mask slots for {len(self.frames)} frames")
            for i, mask in enumerate(self.masks):
                if mask is not None:
                    check_mask(mask, shape, f"{self.name} mask {i}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> Tuple[int, int]:
        return self.frames[0].shape[:2]

    @property
    def fully_annotated(self) -> bool:
        return self.masks is not None and all(m is not None for m in self.masks)

    @property
    def object_ids(self) -> List[int]:
        """Object labels present in the first annotation."""
        if self.masks is None or self.masks[0] is None:
            raise DataError(f"{self.name}: frame 0 is not annotated")
        return [int(v) for v in np.unique(self.masks[0]) if v != 0]


@dataclass
class TrainingSample:
    """One (template, current, prior) training triplet for a single object.

    All masks are binary uint8 maps of the chosen ``object_id``.
    """

    template_image: np.ndarray
    template_mask: np.ndarray
    current_image: np.ndarray
    current_mask: np.ndarray
    prior_mask: np.ndarray
    object_id: int = 1
    indices: Tuple[int, int, int] = field(default=(0, 0, 0))
