"""DAVIS-style evaluation: region similarity J, boundary F-measure, per-sequence statistics.

Conventions (recorded in every report header):

* boundary tolerance: ceil(0.008 * image diagonal) pixels
* boundary map: a pixel is on the boundary when it differs from its right,
  bottom or bottom-right neighbour (neighbours outside the image are ignored)
* recall: fraction of scored frames with score > 0.5
* decay: frames split into 4 overlapping bins at round(linspace(1, n, 5)) - 1;
  decay = mean(first bin) - mean(last bin)
* frame 0 (the given annotation) and the last frame are not scored
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

BOUNDARY_FRACTION = 0.008
DECAY_BINS = 4
RECALL_THRESHOLD = 0.5
TABLE_COLUMNS = ["J&F", "J Mean", "J Recall", "J Decay", "F Mean", "F Recall", "F Decay"]


def _binary(mask, object_id: Optional[int]) -> np.ndarray:
    mask = np.asarray(mask)
    return mask.astype(bool) if object_id is None else mask == object_id


def _check_sizes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"size mismatch: {np.shape(a)} vs {np.shape(b)}")


def jaccard(pred, gt, object_id: Optional[int] = 1) -> float:
    """|pred & gt| / |pred | gt| for one object; two empty masks score 1."""
    _check_sizes(pred, gt)
    p, g = _binary(pred, object_id), _binary(gt, object_id)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def default_tolerance(shape) -> int:
    return int(math.ceil(BOUNDARY_FRACTION * math.hypot(*shape)))


def boundary_map(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    b = np.zeros_like(m)
    b[:, :-1] |= m[:, :-1] != m[:, 1:]
    b[:-1, :] |= m[:-1, :] != m[1:, :]
    b[:-1, :-1] |= m[:-1, :-1] != m[1:, 1:]
    return b


def boundary_f(pred, gt, tol_px: Optional[float] = None, object_id: Optional[int] = 1) -> float:
    """Boundary F-measure with boundary pixels matched within ``tol_px`` (Euclidean)."""
    _check_sizes(pred, gt)
    pb = boundary_map(_binary(pred, object_id))
    gb = boundary_map(_binary(gt, object_id))
    tol = default_tolerance(np.shape(pred)) if tol_px is None else tol_px
    n_p, n_g = np.count_nonzero(pb), np.count_nonzero(gb)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    dist_to_g = distance_transform_edt(~gb)
    dist_to_p = distance_transform_edt(~pb)
    precision = np.count_nonzero(dist_to_g[pb] <= tol) / n_p
    recall = np.count_nonzero(dist_to_p[gb] <= tol) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricStats:
    mean: float
    recall: float
    decay: Optional[float]

    def as_dict(self) -> Dict:
        return {"mean": self.mean, "recall": self.recall, "decay": self.decay}


@dataclass
class SequenceReport:
    J: MetricStats
    F: MetricStats

    @property
    def jf_mean(self) -> float:
        return (self.J.mean + self.F.mean) / 2

    def as_dict(self) -> Dict:
        return {"J": self.J.as_dict(), "F": self.F.as_dict(), "jf_mean": self.jf_mean}

    def row(self) -> List[Optional[float]]:
        return [self.jf_mean, self.J.mean, self.J.recall, self.J.decay,
                self.F.mean, self.F.recall, self.F.decay]


def decay_bins(n: int) -> List[slice]:
    ids = np.round(np.linspace(1, n, DECAY_BINS + 1) + 1e-10).astype(int) - 1
    return [slice(ids[i], ids[i + 1] + 1) for i in range(DECAY_BINS)]


def metric_stats(scores: Sequence[float]) -> MetricStats:
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no scored frames")
    decay = None
    if x.size >= DECAY_BINS:
        bins = decay_bins(x.size)
        decay = float(np.mean(x[bins[0]]) - np.mean(x[bins[-1]]))
    return MetricStats(float(x.mean()), float(np.mean(x > RECALL_THRESHOLD)), decay)


def scored_frames(n: int, include_first: bool = False, include_last: bool = False) -> List[int]:
    lo = 0 if include_first else 1
    hi = n if include_last else n - 1
    return list(range(lo, hi))


def sequence_stats(j_scores: Sequence[float], f_scores: Sequence[float]) -> SequenceReport:
    """Mean / recall / decay for per-frame J and F (already restricted to scored frames)."""
    return SequenceReport(metric_stats(j_scores), metric_stats(f_scores))


def aggregate(reports: Sequence[SequenceReport]) -> SequenceReport:
    """Average every statistic over sequences (absent decays are skipped)."""
    def avg(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    def fold(key):
        stats = [getattr(r, key) for r in reports]
        return MetricStats(avg([s.mean for s in stats]), avg([s.recall for s in stats]),
                           avg([s.decay for s in stats]))

    return SequenceReport(fold("J"), fold("F"))


def score_video(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], object_ids: Sequence[int],
                include_first: bool = False, include_last: bool = False) -> Dict[int, Dict[str, List[float]]]:
    """Per-object per-frame J and F over the scored frames."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted frames vs {len(gt)} annotated frames")
    frames = scored_frames(len(gt), include_first, include_last)
    if not frames:
        frames = list(range(1, len(gt))) or [0]
    out = {}
    for obj in object_ids:
        out[obj] = {
            "J": [jaccard(pred[t], gt[t], obj) for t in frames],
            "F": [boundary_f(pred[t], gt[t], None, obj) for t in frames],
        }
    return out


def evaluate(predictions: Mapping[str, Sequence[np.ndarray]],
             annotations: Mapping[str, Sequence[np.ndarray]],
             include_first: bool = False, include_last: bool = False) -> Dict:
    """Report over videos; multi-object videos contribute one entry per object (``name_k``)."""
    per_video: Dict[str, SequenceReport] = {}
    for name in sorted(annotations):
        gt = annotations[name]
        if name not in predictions:
            raise ValueError(f"no predictions for video {name}")
        objects = sorted(int(v) for v in np.unique(gt[0]) if v != 0)
        scores = score_video(predictions[name], gt, objects, include_first, include_last)
        for obj in objects:
            key = name if len(objects) == 1 else f"{name}_{obj}"
            per_video[key] = sequence_stats(scores[obj]["J"], scores[obj]["F"])
    glob = aggregate(list(per_video.values()))
    return {
        "per_video": {k: r.as_dict() for k, r in per_video.items()},
        "global": glob.as_dict(),
        "protocol": protocol_header(include_first, include_last),
    }


def protocol_header(include_first: bool = False, include_last: bool = False) -> Dict:
    return {
        "boundary_tolerance": f"ceil({BOUNDARY_FRACTION} * image diagonal) px",
        "recall_threshold": RECALL_THRESHOLD,
        "decay_bins": DECAY_BINS,
        "decay": "mean(first bin) - mean(last bin), bins at round(linspace(1, n, 5)) - 1",
        "first_frame_scored": include_first,
        "last_frame_scored": include_last,
    }


def _csv_row(name: str, d: Dict) -> List:
    return [name, d["jf_mean"], d["J"]["mean"], d["J"]["recall"], d["J"]["decay"],
            d["F"]["mean"], d["F"]["recall"], d["F"]["decay"]]


def write_report(report: Dict, json_path, csv_path=None) -> None:
    json_path = Path(json_path)
    json_path.write_text(json.dumps(report, indent=2))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["Sequence"] + TABLE_COLUMNS)
            for name, d in report["per_video"].items():
                writer.writerow(_csv_row(name, d))
            writer.writerow(_csv_row("Global", report["global"]))
