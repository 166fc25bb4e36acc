"""Randomized checks of the contrastive losses against the nested-loop oracle.

Used by the ``verify-losses`` command and by the test-suite. Every check is
seeded, so a run is a deterministic function of its arguments.
"""

from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..data.types import halves_pairing
from .global_loss import global_contrastive_loss
from .local import local_contrastive_loss
from .oracle import reference_global_loss, reference_local_loss
from .sets import build_contrast_sets, feature_maps

# (label, strategy, keyword arguments)
ORACLE_CASES = (
    ("full", "supervised_full", {}),
    ("stride1", "supervised_stride", {"stride": 1}),
    ("stride2", "supervised_stride", {"stride": 2}),
    ("stride4", "supervised_stride", {"stride": 4}),
    ("block4", "supervised_block", {"block_size": 4}),
    ("block8", "supervised_block", {"block_size": 8}),
    ("selfsup9", "selfsup_grid", {"grid_points": 9}),
)


@dataclass
class Instance:
    raw: torch.Tensor  # (n, c, H, W) float64, not normalized
    labels: np.ndarray  # (n, H, W)
    tau: float

    @property
    def features(self) -> torch.Tensor:
        return F.normalize(self.raw, dim=1)


def random_instance(seed: int, side: int = 8, max_channels: int = 4, max_classes: int = 3,
                    maps=(2, 4), even: bool = False, min_channels: int = 1) -> Instance:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(maps[0], maps[1] + 1))
    if even and n % 2:
        n += 1 if n < maps[1] else -1
    c = int(rng.integers(min_channels, max_channels + 1))
    k = int(rng.integers(1, max_classes + 1))
    raw = torch.from_numpy(rng.standard_normal((n, c, side, side)))
    labels = rng.integers(0, k + 1, size=(n, side, side))
    tau = float(rng.choice([0.1, 0.5, 1.0]))
    return Instance(raw, labels, tau)


@dataclass
class CheckResult:
    name: str
    passed: int = 0
    total: int = 0
    worst: float = 0.0
    tolerance: float = 0.0
    seconds: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and self.passed == self.total

    def record(self, err: float, label) -> None:
        self.total += 1
        self.worst = max(self.worst, err)
        if err <= self.tolerance:
            self.passed += 1
        else:
            self.failures.append((label, err))

    def summary(self) -> str:
        return (f"{self.name}: {self.passed}/{self.total} within {self.tolerance:g} "
                f"(max err {self.worst:.3g}, {self.seconds:.1f}s)")


def check_oracle(num_instances: int = 100, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """Vectorized local loss versus the oracle, every strategy on every instance."""
    res = CheckResult("oracle", tolerance=tol)
    t0 = time.perf_counter()
    for i in range(num_instances):
        inst = random_instance(seed * 100_003 + i, even=True)
        maps = feature_maps(inst.features, inst.labels)
        for label, mode, kw in ORACLE_CASES:
            sets = build_contrast_sets(maps, mode, **kw)
            fast = float(local_contrastive_loss(maps, sets, inst.tau))
            slow = reference_local_loss(maps, sets, inst.tau)
            res.record(abs(fast - slow), (i, label))
    res.seconds = time.perf_counter() - t0
    return res


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / scale


def finite_difference(fn, x: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central differences of a scalar function over every entry of ``x``."""
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for k in range(flat.numel()):
            orig = float(flat[k])
            flat[k] = orig + step
            up = float(fn(x))
            flat[k] = orig - step
            down = float(fn(x))
            flat[k] = orig
            gflat[k] = (up - down) / (2 * step)
    return grad


def _analytic(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach()


def check_gradients(num_instances: int = 20, seed: int = 0, tol: float = 1e-4,
                    step: float = 1e-5) -> CheckResult:
    """Autograd versus central differences for both losses, with respect to
    the features before L2 normalization."""
    res = CheckResult("gradient", tolerance=tol)
    t0 = time.perf_counter()
    for i in range(num_instances):
        # c >= 2: for c = 1 normalization is a sign function with zero gradient
        inst = random_instance(seed * 100_003 + 50_000 + i, side=4, maps=(2, 4), even=True, min_channels=2)
        mode, kw = [("supervised_full", {}), ("supervised_block", {"block_size": 2}),
                    ("selfsup_grid", {"grid_points": 9})][i % 3]
        labels = inst.labels
        if mode == "selfsup_grid":
            inst = random_instance(seed * 100_003 + 50_000 + i, side=6, maps=(2, 2), min_channels=2)
            labels = None
        sets = build_contrast_sets(feature_maps(F.normalize(inst.raw, dim=1), labels), mode, **kw)

        def local_fn(x, sets=sets, labels=labels, tau=inst.tau):
            return local_contrastive_loss(feature_maps(F.normalize(x, dim=1), labels), sets, tau)

        x = inst.raw.clone()
        res.record(relative_error(_analytic(local_fn, x), finite_difference(local_fn, x, step)),
                   (i, "local", mode))

        rng = np.random.default_rng(seed * 100_003 + 70_000 + i)
        b = int(rng.integers(2, 5))
        z = torch.from_numpy(rng.standard_normal((2 * b, int(rng.integers(2, 9)))))
        pairs = halves_pairing(2 * b)

        def global_fn(x, pairs=pairs, tau=inst.tau):
            return global_contrastive_loss(F.normalize(x, dim=1), pairs, tau)

        res.record(relative_error(_analytic(global_fn, z), finite_difference(global_fn, z.clone(), step)),
                   (i, "global"))
    res.seconds = time.perf_counter() - t0
    return res


def permute_maps(inst: Instance, perm: np.ndarray) -> Instance:
    return Instance(inst.raw[torch.from_numpy(perm)], inst.labels[perm], inst.tau)


def check_invariance(num_instances: int = 20, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Batch permutation (with pairing relabeled) leaves both losses unchanged."""
    res = CheckResult("invariance", tolerance=tol)
    t0 = time.perf_counter()
    for i in range(num_instances):
        inst = random_instance(seed * 100_003 + 90_000 + i, even=True)
        n = inst.raw.shape[0]
        rng = np.random.default_rng(seed * 100_003 + 95_000 + i)
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        pairs = halves_pairing(n)
        # new slot k holds old map perm[k]; its partner moves to inv[pairs[perm[k]]]
        new_pairs = inv[pairs[perm]]
        moved = permute_maps(inst, perm)
        for mode, kw in (("supervised_full", {}), ("supervised_block", {"block_size": 4}),
                         ("selfsup_grid", {})):
            m0 = feature_maps(inst.features, inst.labels)
            m1 = feature_maps(moved.features, moved.labels)
            a = float(local_contrastive_loss(m0, build_contrast_sets(m0, mode, pair_index=pairs, **kw),
                                             inst.tau))
            b = float(local_contrastive_loss(m1, build_contrast_sets(m1, mode, pair_index=new_pairs, **kw),
                                             inst.tau))
            res.record(abs(a - b), (i, mode))
        z = F.normalize(torch.from_numpy(rng.standard_normal((n, 5))), dim=1)
        a = float(global_contrastive_loss(z, pairs, inst.tau))
        b = float(global_contrastive_loss(z[torch.from_numpy(perm)], new_pairs, inst.tau))
        res.record(abs(a - b), (i, "global"))
    res.seconds = time.perf_counter() - t0
    return res


def check_degeneracies(num_instances: int = 20, seed: int = 0) -> CheckResult:
    """Identities that must hold exactly (or to 1e-9 for the ln 3 case)."""
    res = CheckResult("degeneracy", tolerance=1e-9)
    t0 = time.perf_counter()
    for i in range(num_instances):
        inst = random_instance(seed * 100_003 + 120_000 + i)
        maps = feature_maps(inst.features, inst.labels)
        side = inst.raw.shape[-1]
        full = local_contrastive_loss(maps, build_contrast_sets(maps, "supervised_full"), inst.tau)
        s1 = local_contrastive_loss(maps, build_contrast_sets(maps, "supervised_stride", stride=1), inst.tau)
        res.record(0.0 if torch.equal(full, s1) else math.inf, (i, "stride1==full"))
        blk = local_contrastive_loss(maps, build_contrast_sets(maps, "supervised_block", block_size=side),
                                     inst.tau)
        res.record(0.0 if torch.equal(full, blk) else math.inf, (i, "single block==full"))

        rng = np.random.default_rng(seed * 100_003 + 130_000 + i)
        z = F.normalize(torch.from_numpy(rng.standard_normal((2, 6))), dim=1)
        g1 = float(global_contrastive_loss(z, [1, 0], inst.tau))
        res.record(0.0 if g1 == 0.0 else math.inf, (i, "b=1 global==0"))
        same = F.normalize(torch.from_numpy(rng.standard_normal((1, 6))), dim=1).repeat(4, 1)
        g2 = float(global_contrastive_loss(same, halves_pairing(4), inst.tau))
        res.record(abs(g2 - math.log(3)), (i, "identical b=2 global==ln3"))
    res.seconds = time.perf_counter() - t0
    return res


def check_global_oracle(num_instances: int = 20, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    res = CheckResult("global-oracle", tolerance=tol)
    t0 = time.perf_counter()
    for i in range(num_instances):
        rng = np.random.default_rng(seed * 100_003 + 140_000 + i)
        n = 2 * int(rng.integers(1, 6))
        z = F.normalize(torch.from_numpy(rng.standard_normal((n, int(rng.integers(2, 9))))), dim=1)
        pairs = halves_pairing(n)
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        res.record(abs(float(global_contrastive_loss(z, pairs, tau))
                       - reference_global_loss(z.tolist(), pairs, tau)), (i, n))
    res.seconds = time.perf_counter() - t0
    return res


@contextmanager
def quiet_drops():
    """Silence the per-call dropped-anchor warning; random labels trigger it often."""
    log = logging.getLogger("semicontrast.losses.local")
    level = log.level
    log.setLevel(logging.ERROR)
    try:
        yield
    finally:
        log.setLevel(level)


def run_battery(seed: int = 0, oracle_instances: int = 100, gradient_instances: int = 20) -> list[CheckResult]:
    with quiet_drops():
        return [
            check_oracle(oracle_instances, seed),
            check_global_oracle(20, seed),
            check_degeneracies(20, seed),
            check_gradients(gradient_instances, seed),
            check_invariance(20, seed),
        ]
