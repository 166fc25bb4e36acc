"""Pixel-wise (local) contrastive loss over precomputed contrast sets."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import torch

from .sets import ContrastSets, LocalFeatureMap

logger = logging.getLogger(__name__)

# upper bound on anchor-by-candidate similarity entries held at once
CHUNK_ELEMENTS = 1 << 22


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"temperature tau must be > 0, got {tau}")
    return tau


def stack_maps(maps: Sequence[LocalFeatureMap]) -> tuple[torch.Tensor, dict]:
    """Flatten maps to (num_maps * H * W, c) plus image_index -> slot lookup."""
    slots = {m.image_index: k for k, m in enumerate(maps)}
    if len(slots) != len(maps):
        raise ValueError("duplicate image_index among feature maps")
    feats = torch.stack([m.features for m in maps])  # (n, c, H, W)
    n, c, h, w = feats.shape
    return feats.permute(0, 2, 3, 1).reshape(n * h * w, c), slots


def _flat_index(points: np.ndarray, slots: dict, h: int, w: int) -> np.ndarray:
    lookup = np.full(max(slots) + 1, -1, dtype=np.int64)
    for image_index, slot in slots.items():
        lookup[image_index] = slot
    return lookup[points[:, 0]] * h * w + points[:, 1] * w + points[:, 2]


def _chunk_terms(sim, pos, same, p, positive_inside_log):
    # one shared shift per row; exact unless a row's positive or negative
    # mass underflows, in which case the masked logsumexp path takes over
    shift = sim.detach().amax(dim=1, keepdim=True)
    e = torch.exp(sim - shift)
    neg_sum = (e * ~same).sum(dim=1)
    if positive_inside_log:
        pos_sum = (e * pos).sum(dim=1)
        if bool((pos_sum > 0).all() and (neg_sum > 0).all()):
            return -(pos_sum.log() - neg_sum.log()) / p
        pos_lse = torch.logsumexp(sim.masked_fill(~pos, float("-inf")), dim=1)
        neg_lse = torch.logsumexp(sim.masked_fill(same, float("-inf")), dim=1)
        return -(pos_lse - neg_lse) / p
    if bool((neg_sum > 0).all()):
        neg_lse = neg_sum.log() + shift[:, 0]
    else:
        neg_lse = torch.logsumexp(sim.masked_fill(same, float("-inf")), dim=1)
    return -((sim * pos).sum(dim=1) / p - neg_lse)


def _group_terms(x: torch.Tensor, keys: torch.Tensor, anchors: torch.Tensor,
                 npos: torch.Tensor, tau: float, positive_inside_log: bool) -> torch.Tensor:
    m = x.shape[0]
    chunk = max(1, CHUNK_ELEMENTS // max(m, 1))
    cols = torch.arange(m)
    terms = []
    for s in range(0, len(anchors), chunk):
        a = anchors[s:s + chunk]
        sim = x[a] @ x.T / tau
        same = keys[a][:, None] == keys[None, :]
        pos = same & (cols[None, :] != a[:, None])
        p = npos[s:s + chunk].to(sim.dtype)
        terms.append(_chunk_terms(sim, pos, same, p, positive_inside_log))
    return torch.cat(terms)


def local_contrastive_loss(maps: Sequence[LocalFeatureMap], sets: ContrastSets, tau: float,
                           positive_inside_log: bool = True) -> torch.Tensor:
    """Batch local contrastive loss.

    Per anchor: ``-1/|P| * log(sum_P exp(f.f_p/tau) / sum_N exp(f.f_n/tau))``.
    Terms are averaged per image over its anchors, then over images that have
    anchors, then over groups (blocks) that have anchors. Anchors with an
    empty positive or negative set are dropped with a warning. Returns a zero
    scalar, still attached to the graph, when nothing is left.

    With ``positive_inside_log=False`` each positive gets its own log term
    (``-mean_p log(exp(f.f_p/tau) / sum_N ...)``).
    """
    tau = check_tau(tau)
    if not maps:
        return torch.zeros(())
    flat, slots = stack_maps(maps)
    zero = flat.sum() * 0.0
    h, w = maps[0].features.shape[1:]

    group_values = []
    dropped = 0
    for g in sets.groups:
        if not g.anchor.any():
            continue
        idx = torch.from_numpy(_flat_index(g.points, slots, h, w))
        keys_np = g.keys.astype(np.int64)
        uniq, inverse, counts = np.unique(keys_np, return_inverse=True, return_counts=True)
        same_count = counts[inverse]
        anchor_pos = np.flatnonzero(g.anchor)
        npos = same_count[anchor_pos] - 1
        nneg = len(keys_np) - same_count[anchor_pos]
        ok = (npos >= 1) & (nneg >= 1)
        dropped += int((~ok).sum())
        anchor_pos, npos = anchor_pos[ok], npos[ok]
        if len(anchor_pos) == 0:
            continue

        terms = _group_terms(flat[idx], torch.from_numpy(keys_np), torch.from_numpy(anchor_pos),
                             torch.from_numpy(npos), tau, positive_inside_log)
        images = g.points[anchor_pos, 0]
        img_ids, img_inv = np.unique(images, return_inverse=True)
        img_inv = torch.from_numpy(img_inv.astype(np.int64))
        per_image = torch.zeros(len(img_ids), dtype=terms.dtype).index_add(0, img_inv, terms)
        n_per_image = torch.bincount(img_inv, minlength=len(img_ids)).to(terms.dtype)
        group_values.append((per_image / n_per_image).mean())

    if dropped:
        logger.warning("dropped %d anchor(s) with an empty positive or negative set", dropped)
    if not group_values:
        return zero
    return torch.stack(group_values).mean() + zero
