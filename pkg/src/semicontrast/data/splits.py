from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .types import DatasetSplits, Volume


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_and_select(corpus: Sequence[Volume], ratios, label_fraction: float,
                     seed: int) -> DatasetSplits:
    """Volume-level train/val/test split plus a labeled subset of train.

    Labeled volumes are a prefix of a seeded permutation of train, so for a
    fixed seed the labeled sets of increasing fractions are nested.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0, 1], got {label_fraction}")

    n = len(corpus)
    n_val = _round_half_up(ratios[1] * n)
    n_test = _round_half_up(ratios[2] * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(
            f"corpus of {n} volumes too small for ratios {ratios}: "
            f"train={n_train}, val={n_val}, test={n_test}"
        )

    rng = np.random.default_rng(seed)
    ids = [v.id for v in corpus]
    if len(set(ids)) != n:
        raise ValueError("volume ids must be unique")
    order = rng.permutation(n)
    train = [ids[i] for i in order[:n_train]]
    val = [ids[i] for i in order[n_train:n_train + n_val]]
    test = [ids[i] for i in order[n_train + n_val:]]

    n_labeled = max(1, _round_half_up(label_fraction * n_train))
    pick = rng.permutation(n_train)
    labeled = [train[i] for i in sorted(pick[:n_labeled])]
    labeled_set = set(labeled)
    unlabeled = [v for v in train if v not in labeled_set]
    return DatasetSplits(train, val, test, labeled, unlabeled)
