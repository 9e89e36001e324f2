"""Frame-by-frame video object segmentation with a trained RANet.

The template frame is encoded once. Every later frame is encoded once and
correlated once against the template; only the FG/BG filtering, ranking and
decoding run per object. Objects are combined with a softmax over
{background, object 1..N}, where the background score is the mean (or max)
of the per-object background logits.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data.types import DataError, VideoSequence
from .encoder import TemplateBank, build_template_bank
from .matching import correlate
from .model import RANet


@dataclass
class VideoState:
    template_feature: torch.Tensor          # (C, H0, W0)
    banks: Dict[int, TemplateBank]
    object_ids: List[int]
    prev: np.ndarray                          # (N, H, W) soft masks in [0, 1]
    frame_index: int
    size: tuple


@dataclass
class FrameResult:
    probs: np.ndarray        # (N + 1, H, W); row 0 is background
    labels: np.ndarray       # (H, W) object labels
    state: VideoState
    info: List[Dict] = field(default_factory=list)


class Segmenter:
    """Stateless wrapper around a model; all per-video state lives in :class:`VideoState`.

    ``mode="binary"`` (single object only) thresholds sigmoid(fg - bg) instead
    of the softmax; both give the same labels for one object.
    """

    def __init__(self, model: RANet, mode: str = "softmax", record: bool = False):
        if mode not in ("softmax", "binary"):
            raise ValueError(f"unknown mode {mode!r}")
        self.model = model.eval()
        self.mode = mode
        self.record = record
        self.encoder_calls = 0
        self.correlation_calls = 0

    @property
    def config(self):
        return self.model.config

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    def _to_input(self, frame: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(np.ascontiguousarray(frame)).permute(2, 0, 1).unsqueeze(0).to(self.dtype)
        size = tuple(self.config.input_size)
        if tuple(x.shape[-2:]) != size:
            if self.config.size_policy == "error":
                raise DataError(f"frame size {tuple(x.shape[-2:])} != model input size {size} "
                                "(set size_policy='resize' to rescale)")
            x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return x

    def _encode(self, frame: np.ndarray):
        self.encoder_calls += 1
        return self.model.encode(self._to_input(frame))

    @torch.no_grad()
    def init_state(self, first_frame: np.ndarray, first_mask: np.ndarray,
                   objects: Optional[Sequence[int]] = None) -> VideoState:
        first_mask = np.asarray(first_mask)
        present = sorted(int(v) for v in np.unique(first_mask) if v != 0)
        objects = list(present if objects is None else objects)
        if not objects:
            raise DataError("the first-frame mask contains no object")
        stray = sorted(set(present) - set(objects))
        if stray:
            raise DataError(f"mask labels {stray} are not in the declared object set {objects}")
        missing = [o for o in objects if o not in present]
        if missing:
            raise DataError(f"objects {missing} are empty in the first-frame mask")
        if self.mode == "binary" and len(objects) != 1:
            raise ValueError("binary mode handles exactly one object")
        _, feat = self._encode(first_frame)
        feat = feat[0]
        model_mask = self._mask_to_input(first_mask)
        banks = {o: build_template_bank(feat, model_mask, o) for o in objects}
        prev = np.stack([(first_mask == o).astype(np.float32) for o in objects])
        return VideoState(feat, banks, objects, prev, 0, first_mask.shape)

    def _mask_to_input(self, mask: np.ndarray) -> np.ndarray:
        size = tuple(self.config.input_size)
        if mask.shape == size:
            return mask
        ys = np.floor((np.arange(size[0]) + 0.5) * mask.shape[0] / size[0]).astype(np.int64)
        xs = np.floor((np.arange(size[1]) + 0.5) * mask.shape[1] / size[1]).astype(np.int64)
        return mask[np.ix_(ys, xs)]

    @torch.no_grad()
    def segment_frame(self, state: VideoState, frame: np.ndarray) -> FrameResult:
        if frame.shape[:2] != tuple(state.size):
            raise DataError(f"frame size {frame.shape[:2]} differs from template size {tuple(state.size)}")
        model = self.model
        n = len(state.object_ids)
        pyramid, feat = self._encode(frame)
        t_feat = state.template_feature.unsqueeze(0).expand(n, -1, -1, -1)
        c_feat = feat.expand(n, -1, -1, -1)
        tmasks = torch.stack([state.banks[o].template_mask for o in state.object_ids])
        sim = None
        if model.config.variant != "no_correlation":
            self.correlation_calls += 1
            bank = state.banks[state.object_ids[0]]
            sim = correlate(bank, feat[0]).unsqueeze(0).expand(n, -1, -1, -1)
        if hasattr(model, "ram"):
            model.ram.record = self.record
        fg, bg = model.streams(sim, t_feat, c_feat, tmasks)
        prev = torch.from_numpy(state.prev).to(self.dtype)
        size = tuple(self.config.input_size)
        if tuple(prev.shape[-2:]) != size:
            prev = F.interpolate(prev.unsqueeze(1), size=size, mode="bilinear", align_corners=False)[:, 0]
        skips = type(pyramid)([lvl.expand(n, -1, -1, -1) for lvl in pyramid.levels])
        logits = model.head(fg, bg, prev, skips, size)
        if tuple(logits.shape[-2:]) != tuple(state.size):
            logits = F.interpolate(logits, size=tuple(state.size), mode="bilinear", align_corners=False)
        logits = logits.double()
        fg_logit, bg_logit = logits[:, 0], logits[:, 1]
        if self.mode == "binary":
            p = torch.sigmoid(fg_logit[0] - bg_logit[0])
            probs = torch.stack([1 - p, p])
            labels = np.where((p > 0.5).numpy(), state.object_ids[0], 0)
        else:
            if self.config.background_logit == "mean":
                background = bg_logit.mean(dim=0)
            else:
                background = bg_logit.amax(dim=0)
            probs = torch.softmax(torch.cat([background.unsqueeze(0), fg_logit]), dim=0)
            ids = np.array([0] + list(state.object_ids))
            labels = ids[probs.argmax(dim=0).numpy()]
        probs_np = probs.numpy()
        new_state = replace(state, prev=probs_np[1:].astype(np.float32), frame_index=state.frame_index + 1)
        info = list(model.last_info) if self.record else []
        return FrameResult(probs_np, labels.astype(np.uint8), new_state, info)

    def segment_video(self, video: VideoSequence, objects: Optional[Sequence[int]] = None,
                      timings: Optional[List[float]] = None,
                      debug_log: Optional[List[Dict]] = None) -> List[np.ndarray]:
        """Label maps for every frame; frame 0 is the given annotation, untouched."""
        if video.masks is None or video.masks[0] is None:
            raise DataError(f"{video.name}: frame 0 must be annotated")
        first = video.masks[0]
        outputs = [first.copy()]
        if len(video) == 1:
            return outputs
        state = self.init_state(video.frames[0], first, objects)
        for t in range(1, len(video)):
            start = time.perf_counter()
            result = self.segment_frame(state, video.frames[t])
            if timings is not None:
                timings.append(time.perf_counter() - start)
            if debug_log is not None:
                debug_log.append({"frame": t, "objects": state.object_ids, "ram": result.info})
            state = result.state
            outputs.append(result.labels)
        return outputs
