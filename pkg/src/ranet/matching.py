"""Pixel-level correlation between a template bank and current-frame features."""
from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np
import torch
from PIL import Image

from .encoder import TemplateBank


def correlation_kernel(K: torch.Tensor, current: torch.Tensor) -> torch.Tensor:
    """Raw dot products: (N, C) x (C, H, W) -> (N, H, W), no normalisation."""
    c, h, w = current.shape
    if K.shape[1] != c:
        raise ValueError(f"template vectors have {K.shape[1]} channels, current feature has {c}")
    return (K @ current.reshape(c, h * w)).reshape(K.shape[0], h, w)


def correlate(bank: TemplateBank, current: torch.Tensor) -> torch.Tensor:
    """Similarity maps S with S[j, h, w] = <K_j, current[:, h, w]>.

    Channel j is template pixel j in row-major order. Both sides are expected
    to be l2-normalised already, so values are cosines.
    """
    return correlation_kernel(bank.K, current)


def correlate_batch(template: torch.Tensor, current: torch.Tensor) -> torch.Tensor:
    """Batched correlation of (B, C, H0, W0) templates against (B, C, H, W) frames -> (B, H0*W0, H, W)."""
    b, c, h0, w0 = template.shape
    _, c2, h, w = current.shape
    if c != c2:
        raise ValueError(f"channel mismatch {c} vs {c2}")
    K = template.reshape(b, c, h0 * w0).transpose(1, 2)
    return torch.bmm(K, current.reshape(b, c, h * w)).reshape(b, h0 * w0, h, w)


def reshape_for_ram(S: torch.Tensor, template_shape: Tuple[int, int]) -> torch.Tensor:
    """Swap spatial and channel axes: (H0*W0, H, W) -> (H*W, H0, W0).

    out[p, y0, x0] == S[y0 * W0 + x0, p // W, p % W].
    """
    h0, w0 = template_shape
    n, h, w = S.shape
    if n != h0 * w0:
        raise ValueError(f"{n} similarity maps do not match template grid {h0}x{w0}")
    return S.reshape(n, h * w).t().reshape(h * w, h0, w0)


def reshape_from_ram(S_hat: torch.Tensor, current_shape: Tuple[int, int]) -> torch.Tensor:
    """Inverse of :func:`reshape_for_ram`."""
    hw, h0, w0 = S_hat.shape
    h, w = current_shape
    return S_hat.reshape(hw, h0 * w0).t().reshape(h0 * w0, h, w)


def similarity_grid(S: torch.Tensor, indices=None, columns: int = 8, pad: int = 1) -> np.ndarray:
    """Tile selected similarity maps into one uint8 image, [-1, 1] mapped to [0, 255]."""
    maps = S.detach().cpu().numpy()
    if indices is not None:
        maps = maps[np.asarray(indices, dtype=np.int64)]
    n, h, w = maps.shape
    rows = max(1, -(-n // columns))
    grid = np.zeros((rows * (h + pad) + pad, columns * (w + pad) + pad), dtype=np.uint8)
    for k in range(n):
        r, c = divmod(k, columns)
        tile = np.clip((maps[k] + 1.0) * 127.5, 0, 255).astype(np.uint8)
        grid[pad + r * (h + pad): pad + r * (h + pad) + h, pad + c * (w + pad): pad + c * (w + pad) + w] = tile
    return grid


def dump_similarity_grid(S: torch.Tensor, path, indices=None, columns: int = 8) -> Path:
    path = Path(path)
    Image.fromarray(similarity_grid(S, indices, columns)).save(path)
    return path
