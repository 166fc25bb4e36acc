"""Nested-loop evaluation of the local loss, used as ground truth in tests."""

from __future__ import annotations

import math

from .local import check_tau
from .sets import ContrastSets

DEFAULT_MAX_SIDE = 16


def _logsumexp(values):
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def reference_local_loss(maps, sets: ContrastSets, tau: float, positive_inside_log: bool = True,
                         max_side: int = DEFAULT_MAX_SIDE) -> float:
    tau = check_tau(tau)
    if not maps:
        return 0.0
    h, w = maps[0].features.shape[1:]
    if max(h, w) > max_side:
        raise ValueError(f"oracle refuses {h}x{w} maps (bound {max_side}x{max_side})")

    vec = {}
    for m in maps:
        f = m.features.detach().double().tolist()
        c = len(f)
        for r in range(h):
            for col in range(w):
                vec[(m.image_index, r, col)] = [f[k][r][col] for k in range(c)]

    def sim(p, q):
        return math.fsum(a * b for a, b in zip(vec[p], vec[q])) / tau

    # group -> image -> list of anchor terms
    terms = {}
    for gi, anchor, pos, neg in sets.iter_explicit():
        if not pos or not neg:
            continue
        neg_sims = [sim(anchor, q) for q in neg]
        pos_sims = [sim(anchor, q) for q in pos]
        if positive_inside_log:
            t = -(_logsumexp(pos_sims) - _logsumexp(neg_sims)) / len(pos)
        else:
            lse = _logsumexp(neg_sims)
            t = -math.fsum(s - lse for s in pos_sims) / len(pos)
        terms.setdefault(gi, {}).setdefault(anchor[0], []).append(t)

    group_values = []
    for gi in sorted(terms):
        per_image = [math.fsum(ts) / len(ts) for _, ts in sorted(terms[gi].items())]
        group_values.append(math.fsum(per_image) / len(per_image))
    if not group_values:
        return 0.0
    return math.fsum(group_values) / len(group_values)


def reference_global_loss(z, pair_index, tau: float) -> float:
    tau = check_tau(tau)
    rows = [list(map(float, r)) for r in z]
    n = len(rows)
    total = []
    for i in range(n):
        sims = {k: math.fsum(a * b for a, b in zip(rows[i], rows[k])) / tau for k in range(n)}
        denom = _logsumexp([sims[k] for k in range(n) if k != i])
        total.append(-(sims[int(pair_index[i])] - denom))
    return math.fsum(total) / n
