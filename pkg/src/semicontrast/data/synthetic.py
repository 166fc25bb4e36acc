"""Parametric multi-class shape corpus used in place of medical volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import Volume

MAX_FOREGROUND_CLASSES = 7


@dataclass(frozen=True)
class CorpusSpec:
    num_volumes: int = 200
    slices_per_volume: int = 8
    resolution: int = 32
    num_foreground_classes: int = 3
    noise: float = 0.35
    block_size: int = 8
    distractors: int = 2

    def validate(self) -> None:
        if self.num_volumes < 1:
            raise ValueError(f"num_volumes must be >= 1, got {self.num_volumes}")
        if self.slices_per_volume < 1:
            raise ValueError(f"slices_per_volume must be >= 1, got {self.slices_per_volume}")
        if not 1 <= self.num_foreground_classes <= MAX_FOREGROUND_CLASSES:
            raise ValueError(
                f"num_foreground_classes must be in [1, {MAX_FOREGROUND_CLASSES}], "
                f"got {self.num_foreground_classes}"
            )
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.block_size < 1 or self.resolution % self.block_size:
            raise ValueError(
                f"resolution {self.resolution} is not divisible by block size {self.block_size}"
            )


def _shape_mask(kind: int, yy, xx, cy, cx, ry, rx):
    dy = (yy - cy) / ry
    dx = (xx - cx) / rx
    if kind == 0:  # ellipse
        return dy**2 + dx**2 <= 1.0
    if kind == 1:  # annulus
        r2 = dy**2 + dx**2
        return (r2 <= 1.0) & (r2 >= 0.3)
    return (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)  # rectangle


def _place_centers(rng, n, res, radii, tries=64):
    centers = []
    for k in range(n):
        best = None
        for _ in range(tries):
            c = rng.uniform(0.2 * res, 0.8 * res, size=2)
            if all(np.hypot(*(c - o)) >= radii[k] + radii[j] + 1 for j, o in enumerate(centers)):
                best = c
                break
            best = c
        centers.append(best)
    return centers


def _make_volume(spec: CorpusSpec, rng: np.random.Generator, vid: str) -> Volume:
    res, depth, K = spec.resolution, spec.slices_per_volume, spec.num_foreground_classes
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)

    # radii shrink with class count so shapes still fit side by side
    scale = res * min(0.2, 0.5 / np.sqrt(K + 1))
    radii = rng.uniform(0.7, 1.0, size=(K, 2)) * scale
    centers = _place_centers(rng, K, res, radii.max(axis=1))
    drift = rng.normal(0.0, 0.02 * res, size=(K, 2))
    means = 1.0 + 0.6 * np.arange(K) + rng.normal(0.0, 0.05, size=K)

    d_centers = rng.uniform(0.1 * res, 0.9 * res, size=(spec.distractors, 2))
    d_radius = rng.uniform(0.04, 0.07, size=spec.distractors) * res
    d_level = rng.uniform(0.5, 1.0 + 0.6 * K, size=spec.distractors)

    voxels = np.zeros((depth, res, res))
    labels = np.zeros((depth, res, res), dtype=np.int32)
    for z in range(depth):
        t = (z + 0.5) / depth
        profile = 0.65 + 0.35 * np.sin(np.pi * t)
        background = ndimage.gaussian_filter(rng.normal(0.0, 1.0, size=(res, res)), res / 6)
        img = 0.3 * background / (background.std() + 1e-8)
        for i in range(spec.distractors):
            m = _shape_mask(0, yy, xx, *d_centers[i], d_radius[i], d_radius[i])
            img[m] = d_level[i]
        lab = np.zeros((res, res), dtype=np.int32)
        for k in range(K):
            cy, cx = centers[k] + (t - 0.5) * drift[k]
            ry, rx = np.maximum(radii[k] * profile, 1.5)
            m = _shape_mask(k % 3, yy, xx, cy, cx, ry, rx)
            img[m] = means[k]
            lab[m] = k + 1
        voxels[z] = img + rng.normal(0.0, spec.noise, size=(res, res))
        labels[z] = lab

    # arbitrary scanner gain and offset; preprocessing normalizes them away
    gain, offset = rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)
    return Volume(vid, (gain * voxels + offset).astype(np.float32), labels)


def generate_synthetic_corpus(spec: CorpusSpec, seed: int) -> list[Volume]:
    """Generate ``spec.num_volumes`` labeled volumes, deterministic in ``(spec, seed)``.

    Each volume gets its own random stream keyed on ``(seed, index)``, so a
    volume does not change when ``num_volumes`` grows.
    """
    spec.validate()
    return [
        _make_volume(spec, np.random.default_rng([seed, i]), f"vol{i:04d}")
        for i in range(spec.num_volumes)
    ]
