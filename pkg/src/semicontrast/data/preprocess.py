from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .types import Slice2D, Volume

EPS = 1e-8


def volume_stats(v: Volume) -> tuple[float, float]:
    vox = v.voxels.astype(np.float64)
    return float(vox.mean()), float(vox.std())


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def resize_labels(lab: np.ndarray, size: int) -> np.ndarray:
    if lab.shape == (size, size):
        return lab.astype(np.int64, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(lab, dtype=np.float32))[None, None]
    out = F.interpolate(t, size=(size, size), mode="nearest")
    return out[0, 0].numpy().astype(np.int64)


def preprocess_slice(v: Volume, idx: int, target_resolution: int,
                     stats: tuple[float, float] | None = None) -> Slice2D:
    """Normalize with whole-volume statistics, then resize to a square slice.

    ``stats`` lets callers reuse precomputed (mean, std) when extracting many
    slices from the same volume.
    """
    if not 0 <= idx < v.depth:
        raise IndexError(f"slice index {idx} out of range for volume {v.id} of depth {v.depth}")
    mean, std = stats if stats is not None else volume_stats(v)
    pixels = (v.voxels[idx].astype(np.float64) - mean) / max(std, EPS)
    if std < EPS:
        pixels = np.zeros_like(pixels)
    pixels = resize_image(pixels.astype(np.float32), target_resolution)
    labels = None
    if v.labels is not None:
        labels = resize_labels(v.labels[idx], target_resolution)
    return Slice2D(pixels, labels, v.id, idx)


def volume_slices(v: Volume, target_resolution: int, with_labels: bool = True) -> list[Slice2D]:
    stats = volume_stats(v)
    out = []
    for i in range(v.depth):
        s = preprocess_slice(v, i, target_resolution, stats)
        if not with_labels:
            s.labels = None
        out.append(s)
    return out
