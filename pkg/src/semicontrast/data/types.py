from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class Volume:
    """A 3-D intensity volume (depth, height, width) with optional labels."""

    id: str
    voxels: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise ValueError(f"volume {self.id}: voxels must be 3-D, got shape {self.voxels.shape}")
        if self.voxels.shape[0] < 1:
            raise ValueError(f"volume {self.id}: depth must be >= 1")
        if self.labels is not None and self.labels.shape != self.voxels.shape:
            raise ValueError(
                f"volume {self.id}: labels shape {self.labels.shape} != voxels shape {self.voxels.shape}"
            )

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    def without_labels(self) -> "Volume":
        return Volume(self.id, self.voxels, None)


@dataclass
class Slice2D:
    pixels: np.ndarray
    labels: Optional[np.ndarray] = None
    source_volume: str = ""
    slice_index: int = 0


@dataclass
class AugmentedBatch:
    """The augmented set of 2b views; ``pair_index[i]`` is the partner of view i.

    Views are laid out as ``[first views of all b slices, second views]`` so
    the partner of ``i`` is ``(i + b) % 2b``.
    """

    images: np.ndarray  # (2b, H, W) float32
    pair_index: np.ndarray  # (2b,) int
    labels: Optional[np.ndarray] = None  # (2b, H, W) int64

    def __post_init__(self):
        n = len(self.images)
        if n % 2:
            raise ValueError(f"augmented batch must have an even number of views, got {n}")
        check_pairing(self.pair_index, n)

    def __len__(self) -> int:
        return len(self.images)


def halves_pairing(n: int) -> np.ndarray:
    b = n // 2
    return (np.arange(n) + b) % n


def check_pairing(pair_index, n: int) -> None:
    j = np.asarray(pair_index)
    if j.shape != (n,):
        raise ValueError(f"pair_index must have length {n}, got shape {j.shape}")
    if np.any((j < 0) | (j >= n)):
        raise ValueError("pair_index entries out of range")
    idx = np.arange(n)
    if np.any(j == idx):
        raise ValueError("pair_index has a fixed point")
    if np.any(j[j] != idx):
        raise ValueError("pair_index is not an involution")


@dataclass
class DatasetSplits:
    train: list
    val: list
    test: list
    labeled_train: list
    unlabeled_train: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
            "labeled_train": list(self.labeled_train),
            "unlabeled_train": list(self.unlabeled_train),
        }
