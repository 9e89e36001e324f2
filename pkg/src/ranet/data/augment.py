"""Geometric augmentation: thin-plate-spline warp, rotation, scaling and cropping.

Every transform is expressed as a backward map from output pixel coordinates
to source coordinates, so the image (bilinear) and the mask (nearest) are
resampled through exactly the same geometry::

    output p --crop--> q --similarity^-1--> q' --TPS--> q' + d(q') = source

The TPS displacement field ``d`` interpolates random shifts of a 4x4 grid of
control points spread over the image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from .types import DataError

GRID = 4
MAX_SHIFT_FRAC = 0.15
MAX_ROTATION = 30.0
SCALE_RANGE = (0.75, 1.25)


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges; defaults are the full training ranges."""

    max_shift_frac: float = MAX_SHIFT_FRAC
    max_rotation: float = MAX_ROTATION
    scale: Tuple[float, float] = SCALE_RANGE
    crop_frac: Tuple[float, float] = (0.8, 1.0)

    @classmethod
    def identity(cls) -> "AugmentRanges":
        return cls(max_shift_frac=0.0, max_rotation=0.0, scale=(1.0, 1.0), crop_frac=(1.0, 1.0))

    @classmethod
    def mild(cls) -> "AugmentRanges":
        """Small perturbation used to fake an imperfect previous-frame mask."""
        return cls(max_shift_frac=0.04, max_rotation=8.0, scale=(0.92, 1.08), crop_frac=(1.0, 1.0))


@dataclass(frozen=True)
class AugmentParams:
    """One concrete transform for an image of size ``shape``.

    ``shifts`` holds (dy, dx) pixel displacements of the 4x4 control grid,
    ``crop`` is (y0, x0, h, w) in source pixels.
    """

    shape: Tuple[int, int]
    shifts: np.ndarray
    rotation: float = 0.0
    scale: float = 1.0
    crop: Optional[Tuple[float, float, float, float]] = None

    def validate(self) -> None:
        h, w = self.shape
        shifts = np.asarray(self.shifts, dtype=np.float64)
        if shifts.shape != (GRID, GRID, 2):
            raise DataError(f"TPS shifts must have shape ({GRID}, {GRID}, 2), got {shifts.shape}")
        limit = MAX_SHIFT_FRAC * min(h, w)
        if np.abs(shifts).max(initial=0.0) > limit + 1e-9:
            raise DataError(
                f"control-point shift {np.abs(shifts).max():.2f}px exceeds "
                f"{MAX_SHIFT_FRAC:.0%} of min(H, W) = {limit:.2f}px")
        if abs(self.rotation) > MAX_ROTATION + 1e-9:
            raise DataError(f"rotation {self.rotation} deg outside +-{MAX_ROTATION}")
        if not SCALE_RANGE[0] - 1e-9 <= self.scale <= SCALE_RANGE[1] + 1e-9:
            raise DataError(f"scale {self.scale} outside {SCALE_RANGE}")
        if self.crop is not None:
            y0, x0, ch, cw = self.crop
            if ch <= 0 or cw <= 0 or y0 < 0 or x0 < 0 or y0 + ch > h + 1e-9 or x0 + cw > w + 1e-9:
                raise DataError(f"crop {self.crop} does not fit in {self.shape}")

    @classmethod
    def identity(cls, shape: Tuple[int, int]) -> "AugmentParams":
        return cls(shape=tuple(shape), shifts=np.zeros((GRID, GRID, 2)))


def control_points(shape: Tuple[int, int]) -> np.ndarray:
    """The 16 (y, x) control points, evenly spread corner to corner."""
    h, w = shape
    ys, xs = np.meshgrid(np.linspace(0, h - 1, GRID), np.linspace(0, w - 1, GRID), indexing="ij")
    return np.stack([ys.ravel(), xs.ravel()], axis=1)


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r written in terms of r^2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


class ThinPlateSpline:
    """Exact 2-D thin-plate interpolant of vector values at scattered points."""

    def __init__(self, points: np.ndarray, values: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        self._offset = points.mean(axis=0)
        self._scale = np.abs(points - self._offset).max() or 1.0
        p = (points - self._offset) / self._scale
        n = len(p)
        d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        poly = np.hstack([np.ones((n, 1)), p])
        system = np.zeros((n + 3, n + 3))
        system[:n, :n] = _tps_kernel(d2)
        system[:n, n:] = poly
        system[n:, :n] = poly.T
        rhs = np.zeros((n + 3, values.shape[1]))
        rhs[:n] = values
        coef = np.linalg.solve(system, rhs)
        self._points = p
        self._weights = coef[:n]
        self._affine = coef[n:]

    def __call__(self, query: np.ndarray) -> np.ndarray:
        q = (np.asarray(query, dtype=np.float64) - self._offset) / self._scale
        d2 = ((q[:, None, :] - self._points[None, :, :]) ** 2).sum(-1)
        return _tps_kernel(d2) @ self._weights + np.hstack([np.ones((len(q), 1)), q]) @ self._affine


def source_coordinates(params: AugmentParams, out_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Backward map: (2, H_out, W_out) array of source (y, x) per output pixel."""
    h, w = params.shape
    oh, ow = out_shape or params.shape
    yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)

    y0, x0, ch, cw = params.crop if params.crop is not None else (0.0, 0.0, float(h), float(w))
    qy = y0 + (yy + 0.5) * (ch / oh) - 0.5
    qx = x0 + (xx + 0.5) * (cw / ow) - 0.5

    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(params.rotation)
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = (qy - cy) / params.scale, (qx - cx) / params.scale
    ry = cy + c * dy - s * dx
    rx = cx + s * dy + c * dx

    shifts = np.asarray(params.shifts, dtype=np.float64).reshape(-1, 2)
    if np.any(shifts):
        tps = ThinPlateSpline(control_points(params.shape), shifts)
        disp = tps(np.stack([ry.ravel(), rx.ravel()], axis=1))
        ry = ry + disp[:, 0].reshape(ry.shape)
        rx = rx + disp[:, 1].reshape(rx.shape)
    return np.stack([ry, rx])


def augment(image: Optional[np.ndarray], mask: Optional[np.ndarray], params: AugmentParams,
            out_shape: Optional[Tuple[int, int]] = None):
    """Warp ``image`` (bilinear) and ``mask`` (nearest) with the same transform.

    Either input may be ``None``; the corresponding output is then ``None``.
    """
    params.validate()
    coords = source_coordinates(params, out_shape)
    out_img = out_mask = None
    if image is not None:
        if image.shape[:2] != tuple(params.shape):
            raise DataError(f"image size {image.shape[:2]} != params size {params.shape}")
        chans = [map_coordinates(image[..., k].astype(np.float64), coords, order=1, mode="nearest")
                 for k in range(image.shape[2])]
        out_img = np.clip(np.stack(chans, axis=-1), 0.0, 1.0).astype(image.dtype)
    if mask is not None:
        if mask.shape != tuple(params.shape):
            raise DataError(f"mask size {mask.shape} != params size {params.shape}")
        # Round explicitly so the nearest lookup never blends labels.
        iy = np.rint(coords[0]).astype(np.int64)
        ix = np.rint(coords[1]).astype(np.int64)
        valid = (iy >= 0) & (iy < mask.shape[0]) & (ix >= 0) & (ix < mask.shape[1])
        out_mask = np.zeros(coords.shape[1:], dtype=mask.dtype)
        out_mask[valid] = mask[iy[valid], ix[valid]]
    return out_img, out_mask


def sample_params(rng: np.random.Generator, shape: Tuple[int, int],
                  ranges: AugmentRanges = AugmentRanges()) -> AugmentParams:
    h, w = shape
    limit = ranges.max_shift_frac * min(h, w)
    shifts = rng.uniform(-limit, limit, size=(GRID, GRID, 2)) if limit > 0 else np.zeros((GRID, GRID, 2))
    rotation = rng.uniform(-ranges.max_rotation, ranges.max_rotation) if ranges.max_rotation > 0 else 0.0
    lo, hi = ranges.scale
    scale = rng.uniform(lo, hi) if hi > lo else lo
    flo, fhi = ranges.crop_frac
    frac = rng.uniform(flo, fhi) if fhi > flo else flo
    ch, cw = frac * h, frac * w
    y0 = rng.uniform(0, h - ch) if h > ch else 0.0
    x0 = rng.uniform(0, w - cw) if w > cw else 0.0
    return AugmentParams(shape=(h, w), shifts=shifts, rotation=rotation, scale=scale,
                         crop=(y0, x0, ch, cw))
