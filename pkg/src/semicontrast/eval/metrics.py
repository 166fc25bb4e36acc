from __future__ import annotations

import math

import numpy as np


def dice_score(pred, truth, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class Dice for foreground classes 1..num_classes-1, plus their mean.

    Arrays of any shape are pooled, so passing a stack of slices gives the
    volume-level score. A class absent from both prediction and truth gets NaN
    and is left out of the mean; the mean is NaN if every class is absent.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} values must lie in [0, {num_classes})")
    scores = np.full(num_classes - 1, np.nan)
    for k in range(1, num_classes):
        p = pred == k
        t = truth == k
        denom = int(p.sum()) + int(t.sum())
        if denom:
            scores[k - 1] = 2.0 * int((p & t).sum()) / denom
    present = scores[~np.isnan(scores)]
    mean = float(present.mean()) if present.size else math.nan
    return scores, mean


def mean_over_volumes(per_volume: list[tuple[np.ndarray, float]]) -> tuple[np.ndarray, float]:
    """Class-then-volume averaging of volume-level Dice results."""
    if not per_volume:
        return np.array([]), math.nan
    classes = np.stack([pc for pc, _ in per_volume])
    with np.errstate(invalid="ignore"):
        per_class = np.array([
            np.nanmean(col) if np.any(~np.isnan(col)) else math.nan for col in classes.T
        ])
    means = np.array([m for _, m in per_volume])
    means = means[~np.isnan(means)]
    return per_class, float(means.mean()) if means.size else math.nan
