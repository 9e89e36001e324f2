"""Host-relative inference timing."""
from __future__ import annotations

import time
from typing import Dict

import numpy as np

from .data.types import VideoSequence
from .segmenter import Segmenter

NOISE_BOUND = 0.20


def benchmark(segmenter: Segmenter, video: VideoSequence, runs: int = 3, warmup: int = 2) -> Dict:
    """Per-frame latency over ``runs`` passes through ``video``.

    The first ``warmup`` segmented frames of every run are discarded.
    Frame 0 (template initialisation) is timed separately.
    """
    if len(video) < warmup + 2:
        raise ValueError(f"{video.name}: need at least {warmup + 2} frames for warmup={warmup}")
    per_run, init_ms = [], []
    for _ in range(runs):
        start = time.perf_counter()
        state = segmenter.init_state(video.frames[0], video.masks[0])
        init_ms.append(1e3 * (time.perf_counter() - start))
        times = []
        for t in range(1, len(video)):
            start = time.perf_counter()
            state = segmenter.segment_frame(state, video.frames[t]).state
            times.append(1e3 * (time.perf_counter() - start))
        per_run.append(float(np.mean(times[warmup:])))
    per_run_arr = np.asarray(per_run)
    mean = float(per_run_arr.mean())
    spread = float((per_run_arr.max() - per_run_arr.min()) / mean) if mean > 0 else 0.0
    return {
        "video": video.name,
        "frame_size": list(video.size),
        "objects": len(video.object_ids),
        "runs": runs,
        "warmup_frames": warmup,
        "timed_frames_per_run": len(video) - 1 - warmup,
        "ms_per_frame": mean,
        "ms_per_frame_std": float(per_run_arr.std()),
        "fps": 1e3 / mean if mean > 0 else float("inf"),
        "per_run_ms": per_run,
        "template_init_ms": float(np.mean(init_ms)),
        "run_spread": spread,
        "noise_bound": NOISE_BOUND,
        "within_noise_bound": spread <= NOISE_BOUND,
    }
