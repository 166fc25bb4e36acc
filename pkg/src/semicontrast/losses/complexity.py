from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .local import local_contrastive_loss
from .sets import ContrastSets, build_contrast_sets, feature_maps


def count_pairwise_interactions(sets: ContrastSets) -> int:
    """Number of feature dot products the local loss needs: sum of |P| + |N| over anchors."""
    total = 0
    for g in sets.groups:
        if not g.anchor.any():
            continue
        # every other point in the pool is either a positive or a negative
        total += int(g.anchor.sum()) * (len(g.keys) - 1)
    return total


def full_foreground_counts(h: int, stride: int, block: int, maps: int = 2) -> dict:
    """Closed-form interaction counts for ``maps`` single-class maps of side ``h``."""
    n = maps * h * h
    lattice = maps * (len(range(0, h, stride)) ** 2)
    per_block = maps * block * block
    return {
        "full": n * (n - 1),
        "stride": lattice * (lattice - 1),
        "block": (h // block) ** 2 * per_block * (per_block - 1),
    }


def blob_labels(h: int, maps: int = 2, classes: int = 3, seed: int = 0) -> np.ndarray:
    """Label maps with a few rectangular class regions over background."""
    rng = np.random.default_rng(seed)
    lab = np.zeros((maps, h, h), dtype=np.int64)
    for m in range(maps):
        for k in range(1, classes + 1):
            size = int(rng.integers(h // 6, h // 3))
            y, x = rng.integers(0, h - size, size=2)
            lab[m, y:y + size, x:x + size] = k
    return lab


@dataclass
class BenchRow:
    strategy: str
    h: int
    parameter: int
    count: int
    wall_time: float

    def tsv(self) -> str:
        return f"{self.strategy}\t{self.h}\t{self.parameter}\t{self.count}\t{self.wall_time:.6f}"


BENCH_HEADER = "strategy\th\tparameter\tcount\twall_time"


def time_strategy(features: torch.Tensor, labels: np.ndarray, mode: str, parameter: int,
                  tau: float = 0.1, repeats: int = 1) -> BenchRow:
    """Interaction count and best-of-``repeats`` wall time for set building
    plus one evaluation of the local loss.

    Runs without autograd: the backward pass would keep every similarity
    chunk alive, which does not fit in memory for the full strategy at h=160.
    """
    kw = {"stride": parameter} if mode == "supervised_stride" else {"block_size": parameter}
    best, count = float("inf"), 0
    for _ in range(repeats):
        t0 = time.perf_counter()
        with torch.no_grad():
            maps = feature_maps(F.normalize(features, dim=1), labels)
            sets = build_contrast_sets(maps, mode, **kw)
            local_contrastive_loss(maps, sets, tau)
        best = min(best, time.perf_counter() - t0)
        count = count_pairwise_interactions(sets)
    name = {"supervised_full": "full", "supervised_stride": "stride", "supervised_block": "block"}[mode]
    return BenchRow(name, int(features.shape[-1]), parameter if mode != "supervised_full" else 0,
                    count, best)


def bench_complexity(sizes=(32, 64, 160), stride: int = 4, block: int = 16, channels: int = 16,
                     seed: int = 0, repeats: int = 1) -> list[BenchRow]:
    rows = []
    for h in sizes:
        g = torch.Generator().manual_seed(seed)
        feats = torch.randn(2, channels, h, h, generator=g)
        labels = blob_labels(h, seed=seed)
        rows.append(time_strategy(feats, labels, "supervised_full", 0, repeats=repeats))
        rows.append(time_strategy(feats, labels, "supervised_stride", stride, repeats=repeats))
        if h % block == 0:
            rows.append(time_strategy(feats, labels, "supervised_block", block, repeats=repeats))
    return rows
