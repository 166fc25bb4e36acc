"""Paired-view augmentation: intensity jitter, noise, blur, crop-resize, flips."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .preprocess import resize_image, resize_labels
from .types import AugmentedBatch, Slice2D, halves_pairing

POLICY_MODES = ("intensity_only", "intensity_and_spatial")


@dataclass(frozen=True)
class AugmentPolicy:
    mode: str = "intensity_only"
    apply_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    noise: float = 0.1  # fraction of the slice's intensity range
    blur_sigma: tuple = (0.1, 2.0)
    crop_scale: tuple = (0.7, 1.0)
    flip_prob: float = 0.5

    def validate(self) -> None:
        if self.mode not in POLICY_MODES:
            raise ValueError(f"augment mode must be one of {POLICY_MODES}, got {self.mode!r}")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")

    @classmethod
    def identity(cls, mode: str = "intensity_and_spatial") -> "AugmentPolicy":
        return cls(mode=mode, brightness=0.0, contrast=0.0, noise=0.0,
                   blur_sigma=(0.0, 0.0), crop_scale=(1.0, 1.0), flip_prob=0.0)


@dataclass(frozen=True)
class SpatialParams:
    top: int
    left: int
    size: int
    flip_h: bool
    flip_v: bool


def sample_spatial(policy: AugmentPolicy, shape, rng: np.random.Generator) -> Optional[SpatialParams]:
    if policy.mode != "intensity_and_spatial":
        return None
    h, w = shape
    side = min(h, w)
    lo, hi = policy.crop_scale
    size = side
    top = left = 0
    if hi < 1.0 or lo < 1.0:
        if rng.random() < policy.apply_prob:
            size = max(1, int(round(side * rng.uniform(lo, hi))))
            top = int(rng.integers(0, h - size + 1))
            left = int(rng.integers(0, w - size + 1))
    flip_h = bool(rng.random() < policy.flip_prob)
    flip_v = bool(rng.random() < policy.flip_prob)
    return SpatialParams(top, left, size, flip_h, flip_v)


def apply_spatial(arr: np.ndarray, p: Optional[SpatialParams], is_label: bool) -> np.ndarray:
    if p is None:
        return arr
    h, w = arr.shape
    out = arr
    if p.size != min(h, w) or p.top or p.left:
        crop = arr[p.top:p.top + p.size, p.left:p.left + p.size]
        out = resize_labels(crop, h) if is_label else resize_image(crop, h)
    if p.flip_h:
        out = out[:, ::-1]
    if p.flip_v:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def apply_intensity(img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    out = img.astype(np.float32, copy=True)
    if policy.brightness > 0 or policy.contrast > 0:
        if rng.random() < policy.apply_prob:
            c = 1.0 + rng.uniform(-policy.contrast, policy.contrast)
            b = rng.uniform(-policy.brightness, policy.brightness)
            m = out.mean()
            out = (out - m) * c + m + b * (out.std() + 1e-8)
    if policy.noise > 0 and rng.random() < policy.apply_prob:
        span = float(out.max() - out.min())
        out = out + rng.normal(0.0, policy.noise * span, size=out.shape)
    lo, hi = policy.blur_sigma
    if hi > 0 and rng.random() < policy.apply_prob:
        out = ndimage.gaussian_filter(out, rng.uniform(lo, hi), mode="nearest")
    return out.astype(np.float32)


@dataclass
class AugmentedView:
    pixels: np.ndarray
    labels: Optional[np.ndarray]
    spatial: Optional[SpatialParams]


def augment_view(s: Slice2D, policy: AugmentPolicy, rng: np.random.Generator) -> AugmentedView:
    spatial = sample_spatial(policy, s.pixels.shape, rng)
    img = apply_spatial(s.pixels, spatial, is_label=False)
    lab = None if s.labels is None else apply_spatial(s.labels, spatial, is_label=True)
    img = apply_intensity(img, policy, rng)
    return AugmentedView(img, lab, spatial)


def augment_pair(s: Slice2D, policy: AugmentPolicy,
                 rng: np.random.Generator) -> tuple[AugmentedView, AugmentedView]:
    """Two independent draws of the transform chain on the same slice."""
    policy.validate()
    return augment_view(s, policy, rng), augment_view(s, policy, rng)


def make_batch(slices: Sequence[Slice2D], policy: AugmentPolicy, rng: np.random.Generator,
               keep_labels: bool = True) -> AugmentedBatch:
    firsts, seconds = [], []
    for s in slices:
        a, b = augment_pair(s, policy, rng)
        firsts.append(a)
        seconds.append(b)
    views = firsts + seconds
    images = np.stack([v.pixels for v in views]).astype(np.float32)
    labels = None
    if keep_labels and all(v.labels is not None for v in views):
        labels = np.stack([v.labels for v in views]).astype(np.int64)
    return AugmentedBatch(images, halves_pairing(len(views)), labels)
