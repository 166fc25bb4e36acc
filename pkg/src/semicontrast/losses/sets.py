"""Anchor, positive and negative set construction for the local loss.

A :class:`ContrastSets` is stored as a list of *groups*. Each group is a pool
of feature-map points; for an anchor in the pool, its positives are the other
points with the same key and its negatives are the points with a different
key. Supervised strategies key points by class label; the self-supervised
grid keys them by (grid position, source slice), so the only positive is the
same position in the paired view. Block division yields one group per block
position, everything else a single group.

The compact form keeps pair enumeration out of memory for large maps;
:meth:`ContrastSets.iter_explicit` produces the literal per-anchor lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

STRATEGIES = ("supervised_full", "supervised_stride", "supervised_block", "selfsup_grid")


@dataclass
class LocalFeatureMap:
    features: torch.Tensor  # (c, H, W), unit norm along c
    labels: Optional[np.ndarray] = None  # (H, W)
    image_index: int = 0

    def __post_init__(self):
        if self.features.dim() != 3:
            raise ValueError(f"features must be (c, H, W), got {tuple(self.features.shape)}")
        if self.labels is not None and tuple(self.labels.shape) != tuple(self.features.shape[1:]):
            raise ValueError(
                f"labels shape {self.labels.shape} != feature map shape {tuple(self.features.shape[1:])}"
            )


def feature_maps(features: torch.Tensor, labels=None) -> list[LocalFeatureMap]:
    """Split a (N, c, H, W) tensor (and optional (N, H, W) labels) into maps."""
    out = []
    for i in range(features.shape[0]):
        lab = None if labels is None else np.asarray(labels[i])
        out.append(LocalFeatureMap(features[i], lab, i))
    return out


@dataclass
class ContrastGroup:
    points: np.ndarray  # (M, 3) int: image_index, row, col
    keys: np.ndarray  # (M,) int
    anchor: np.ndarray  # (M,) bool

    @property
    def num_anchors(self) -> int:
        return int(self.anchor.sum())


@dataclass
class ContrastSets:
    strategy: str
    groups: list = field(default_factory=list)
    map_shape: tuple = (0, 0)
    num_maps: int = 0

    def anchors(self) -> list[tuple]:
        return [tuple(int(x) for x in g.points[i]) for g in self.groups
                for i in np.flatnonzero(g.anchor)]

    @property
    def num_anchors(self) -> int:
        return sum(g.num_anchors for g in self.groups)

    def iter_explicit(self) -> Iterator[tuple[int, tuple, list, list]]:
        """Yield ``(group_index, anchor, positives, negatives)`` as point tuples.

        Pure-Python enumeration; quadratic in group size, meant for small maps.
        """
        for gi, g in enumerate(self.groups):
            pts = [tuple(int(x) for x in p) for p in g.points]
            keys = [int(k) for k in g.keys]
            for a in range(len(pts)):
                if not g.anchor[a]:
                    continue
                pos, neg = [], []
                for m in range(len(pts)):
                    if m == a:
                        continue
                    (pos if keys[m] == keys[a] else neg).append(pts[m])
                yield gi, pts[a], pos, neg


def _map_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return rows.ravel(), cols.ravel()


def grid_positions(h: int, w: int, grid_points: int = 9) -> list[tuple[int, int]]:
    """Fixed symmetric sampling grid: 3x3 at h/6, h/2, 5h/6 (plus 4 quadrant
    centres at h/3, 2h/3 for the 13-point layout)."""
    if grid_points not in (9, 13):
        raise ValueError(f"grid_points must be 9 or 13, got {grid_points}")
    ys = [int(round(h * f)) for f in (1 / 6, 1 / 2, 5 / 6)]
    xs = [int(round(w * f)) for f in (1 / 6, 1 / 2, 5 / 6)]
    pos = [(min(y, h - 1), min(x, w - 1)) for y in ys for x in xs]
    if grid_points == 13:
        qy = [int(round(h * f)) for f in (1 / 3, 2 / 3)]
        qx = [int(round(w * f)) for f in (1 / 3, 2 / 3)]
        pos += [(min(y, h - 1), min(x, w - 1)) for y in qy for x in qx]
    if len(set(pos)) != len(pos):
        raise ValueError(f"map {h}x{w} too small for a distinct {grid_points}-point grid")
    return pos


def _supervised_group(maps, rows, cols) -> ContrastGroup:
    pts, keys = [], []
    for m in maps:
        lab = np.asarray(m.labels)[rows, cols].astype(np.int64)
        idx = np.full(len(rows), m.image_index, dtype=np.int64)
        pts.append(np.stack([idx, rows, cols], axis=1))
        keys.append(lab)
    keys = np.concatenate(keys)
    return ContrastGroup(np.concatenate(pts).astype(np.int64), keys, keys != 0)


def build_contrast_sets(maps: Sequence[LocalFeatureMap], mode: str, stride: int = 4,
                        block_size: int = 16, grid_points: int = 9,
                        pair_index=None) -> ContrastSets:
    """Build anchor/positive/negative sets for one batch of feature maps.

    ``pair_index`` is only used by ``selfsup_grid``; it defaults to the
    halves layout (view ``i`` pairs with ``(i + n/2) % n``).
    """
    if mode not in STRATEGIES:
        raise ValueError(f"unknown strategy {mode!r}; expected one of {STRATEGIES}")
    if not maps:
        return ContrastSets(mode)
    h, w = maps[0].features.shape[1:]
    if any(tuple(m.features.shape[1:]) != (h, w) for m in maps):
        raise ValueError("all feature maps must share the same spatial shape")
    n = len(maps)
    sets = ContrastSets(mode, [], (int(h), int(w)), n)

    if mode.startswith("supervised"):
        if any(m.labels is None for m in maps):
            raise ValueError(f"strategy {mode} requires labels on every feature map")
        if mode == "supervised_full":
            rows, cols = _map_grid(h, w)
            sets.groups.append(_supervised_group(maps, rows, cols))
        elif mode == "supervised_stride":
            if stride < 1:
                raise ValueError(f"stride must be >= 1, got {stride}")
            rows, cols = _map_grid(h, w)
            keep = (rows % stride == 0) & (cols % stride == 0)
            sets.groups.append(_supervised_group(maps, rows[keep], cols[keep]))
        else:
            if block_size < 1 or h % block_size or w % block_size:
                raise ValueError(f"block_size {block_size} does not divide map size {h}x{w}")
            br, bc = _map_grid(block_size, block_size)
            for by in range(0, h, block_size):
                for bx in range(0, w, block_size):
                    # all-background blocks stay as anchor-free groups; the
                    # loss leaves them out of the block average
                    sets.groups.append(_supervised_group(maps, br + by, bc + bx))
        return sets

    pos = grid_positions(h, w, grid_points)
    j = np.asarray(pair_index) if pair_index is not None else (np.arange(n) + n // 2) % n
    if j.shape != (n,) or np.any(j[j] != np.arange(n)) or np.any(j == np.arange(n)):
        raise ValueError("pair_index must be a fixed-point-free involution over the maps")
    if sorted(m.image_index for m in maps) != list(range(n)):
        raise ValueError("selfsup_grid needs image_index values 0..n-1")
    pts, keys = [], []
    for m in maps:
        i = m.image_index
        source = min(i, int(j[i]))
        for g, (r, c) in enumerate(pos):
            pts.append((i, r, c))
            keys.append(g * n + source)
    keys = np.asarray(keys, dtype=np.int64)
    sets.groups.append(ContrastGroup(np.asarray(pts, dtype=np.int64), keys,
                                     np.ones(len(keys), dtype=bool)))
    return sets
