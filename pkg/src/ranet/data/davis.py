"""Read and write the DAVIS directory layout.

    <root>/JPEGImages/<res>/<video>/00000.jpg
    <root>/Annotations/<res>/<video>/00000.png   (indexed palette, index k = object k)
"""
from __future__ import annotations

import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from PIL import Image

from .types import DataError, VideoSequence

PathLike = Union[str, Path]
_INDEX = re.compile(r"^(\d{5})\.(jpg|jpeg|png)$", re.IGNORECASE)


def davis_palette() -> List[int]:
    """The 256-entry PASCAL/DAVIS colour map, flattened to 768 ints."""
    palette = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend((r, g, b))
    return palette


def _indexed_files(folder: Path, exts: Iterable[str]) -> Dict[int, Path]:
    files = {}
    if not folder.is_dir():
        return files
    for f in folder.iterdir():
        m = _INDEX.match(f.name)
        if m and m.group(2).lower() in exts:
            files[int(m.group(1))] = f
    return files


def read_mask(path: PathLike) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("P", "L", "1"):
        raise DataError(f"{path}: expected an indexed-palette or greyscale mask, got mode {img.mode}")
    return np.array(img, dtype=np.uint8)


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    img = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    img.putpalette(davis_palette())
    img.save(path)


def read_frame(path: PathLike) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def write_frame(path: PathLike, frame: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, quality=95)


def load_video(root: PathLike, subset: str, name: str) -> VideoSequence:
    root = Path(root)
    frames = _indexed_files(root / "JPEGImages" / subset / name, {"jpg", "jpeg", "png"})
    if not frames:
        raise DataError(f"{name}: no frames under JPEGImages/{subset}/{name}")
    expected = list(range(len(frames)))
    if sorted(frames) != expected:
        missing = sorted(set(range(max(frames) + 1)) - set(frames))
        raise DataError(f"{name}: frame indices are not contiguous, missing {missing[:5]}")
    annos = _indexed_files(root / "Annotations" / subset / name, {"png"})
    if 0 not in annos:
        raise DataError(f"{name}: missing annotation for frame 0 (00000.png)")
    extra = sorted(set(annos) - set(frames))
    if extra:
        raise DataError(f"{name}: annotations {extra[:5]} have no matching frame")
    images = [read_frame(frames[i]) for i in expected]
    masks: List[Optional[np.ndarray]] = []
    for i in expected:
        if i in annos:
            m = read_mask(annos[i])
            if m.shape != images[i].shape[:2]:
                raise DataError(f"{name}: mask {i} size {m.shape} != frame size {images[i].shape[:2]}")
            masks.append(m)
        else:
            masks.append(None)
    return VideoSequence(frames=images, masks=masks, name=name)


def list_videos(root: PathLike, subset: str) -> List[str]:
    base = Path(root) / "JPEGImages" / subset
    if not base.is_dir():
        raise DataError(f"no JPEGImages/{subset} directory under {root}")
    return sorted(p.name for p in base.iterdir() if p.is_dir())


def load_davis_layout(root: PathLike, subset: str = "480p") -> List[VideoSequence]:
    """Every video under ``<root>/JPEGImages/<subset>``, sorted by name."""
    return [load_video(root, subset, name) for name in list_videos(root, subset)]


def write_masks(root: PathLike, subset: str, name: str, masks: Iterable[np.ndarray]) -> Path:
    folder = Path(root) / "Annotations" / subset / name
    folder.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        if m is not None:
            write_mask(folder / f"{i:05d}.png", m)
    return folder


def write_davis_layout(root: PathLike, videos: Iterable[VideoSequence], subset: str = "480p") -> None:
    root = Path(root)
    for video in videos:
        folder = root / "JPEGImages" / subset / video.name
        folder.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(video.frames):
            write_frame(folder / f"{i:05d}.jpg", frame)
        if video.masks is not None:
            write_masks(root, subset, video.name, video.masks)


def read_prediction_layout(root: PathLike, subset: str, name: str, n_frames: int) -> List[np.ndarray]:
    """Predicted masks written by ``write_masks``; every frame must be present."""
    annos = _indexed_files(Path(root) / "Annotations" / subset / name, {"png"})
    missing = [i for i in range(n_frames) if i not in annos]
    if missing:
        raise DataError(f"{name}: predictions missing for frames {missing[:5]}")
    return [read_mask(annos[i]) for i in range(n_frames)]
