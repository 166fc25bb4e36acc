from __future__ import annotations

import numpy as np
import torch

from ..data.types import check_pairing
from .local import check_tau


def global_contrastive_loss(z: torch.Tensor, pair_index, tau: float) -> torch.Tensor:
    """Image-level contrastive loss over the 2b augmented views.

    ``-1/|A| * sum_i log(exp(z_i.z_j(i)/tau) / sum_{k != i} exp(z_i.z_k/tau))``.
    ``z`` rows are expected to be unit vectors.
    """
    tau = check_tau(tau)
    n = z.shape[0]
    if n % 2:
        raise ValueError(f"global loss needs an even number of views, got {n}")
    check_pairing(pair_index, n)
    j = torch.as_tensor(np.asarray(pair_index), dtype=torch.long)
    sim = z @ z.T / tau
    eye = torch.eye(n, dtype=torch.bool)
    denom = torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1)
    pos = sim[torch.arange(n), j]
    return -(pos - denom).mean()
