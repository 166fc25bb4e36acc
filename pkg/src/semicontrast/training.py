"""Pre-training stages (global, local) and supervised fine-tuning."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import ExperimentConfig
from .data.augment import AugmentPolicy, make_batch
from .data.preprocess import volume_slices
from .data.types import DatasetSplits, Slice2D, Volume
from .eval.metrics import dice_score, mean_over_volumes
from .losses import build_contrast_sets, feature_maps, global_contrastive_loss, local_contrastive_loss
from .model import NetworkState, forward_global, forward_local, predict_segmentation

logger = logging.getLogger(__name__)

STAGES = ("global", "local_supervised", "local_selfsup", "finetune")
STRATEGY_NAMES = {
    "full": "supervised_full",
    "stride": "supervised_stride",
    "block": "supervised_block",
    "self": "selfsup_grid",
}


@dataclass(frozen=True)
class StageConfig:
    stage: str
    learning_rate: float
    epochs: int
    batch_pairs: int = 8
    batch_size: int = 16
    tau: float = 0.1
    strategy: str = "supervised_block"
    stride: int = 4
    block_size: int = 16
    grid_points: int = 9
    level: int = 1
    positive_inside_log: bool = True
    augment_policy: AugmentPolicy = AugmentPolicy()
    betas: tuple = (0.9, 0.999)
    val_every: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def augment_policy(cfg: ExperimentConfig, mode: Optional[str] = None) -> AugmentPolicy:
    a = cfg.augment
    return AugmentPolicy(mode or a.mode, a.apply_prob, a.brightness, a.contrast, a.noise,
                         tuple(a.blur_sigma), tuple(a.crop_scale), a.flip_prob)


def stage_config(cfg: ExperimentConfig, stage: str, strategy: str = "block") -> StageConfig:
    """Materialize the settings of one stage from an experiment config."""
    t, lc = cfg.training, cfg.losses
    common = dict(tau=lc.tau, stride=lc.stride, block_size=lc.effective_block(cfg.data.resolution),
                  grid_points=lc.grid_points, level=lc.level,
                  positive_inside_log=lc.positive_inside_log, betas=tuple(t.betas))
    if stage == "global":
        s = t.global_
        return StageConfig("global", s.learning_rate, s.epochs, batch_pairs=s.batch_pairs,
                           augment_policy=augment_policy(cfg, s.augment_policy), **common)
    if stage in ("local_supervised", "local_selfsup"):
        s = t.local
        mode = s.augment_policy
        if stage == "local_selfsup":
            # same-position positives only make sense without spatial transforms
            mode = "intensity_only"
            strategy = "self"
        return StageConfig(stage, s.learning_rate, s.epochs, batch_pairs=s.batch_pairs,
                           strategy=STRATEGY_NAMES[strategy],
                           augment_policy=augment_policy(cfg, mode), **common)
    if stage == "finetune":
        s = t.finetune
        return StageConfig("finetune", s.learning_rate, s.epochs, batch_size=s.batch_size,
                           val_every=s.val_every, **common)
    raise ValueError(f"unknown stage {stage!r}")


class SliceStore:
    """Preprocessed slices per volume id, computed once and shared by stages."""

    def __init__(self, volumes: Sequence[Volume], resolution: int):
        self.volumes = {v.id: v for v in volumes}
        self.resolution = resolution
        self._cache: dict[str, list[Slice2D]] = {}

    def _get(self, vid: str) -> list[Slice2D]:
        if vid not in self._cache:
            self._cache[vid] = volume_slices(self.volumes[vid], self.resolution)
        return self._cache[vid]

    def slices(self, ids: Sequence[str], with_labels: bool) -> list[Slice2D]:
        out = []
        for vid in ids:
            for s in self._get(vid):
                if with_labels and s.labels is None:
                    raise ValueError(f"volume {vid} has no labels")
                out.append(Slice2D(s.pixels, s.labels if with_labels else None,
                                   s.source_volume, s.slice_index))
        return out

    def volume_stack(self, vid: str) -> tuple[np.ndarray, np.ndarray]:
        ss = self._get(vid)
        return np.stack([s.pixels for s in ss]), np.stack([s.labels for s in ss])


class EpochLog:
    """Append-only per-epoch rows: stage, epoch, mean_loss, lr."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[tuple] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("stage\tepoch\tmean_loss\tlr\n")

    @staticmethod
    def read(path) -> list[tuple]:
        rows = []
        for line in Path(path).read_text().splitlines()[1:]:
            stage, epoch, loss, lr = line.split("\t")
            rows.append((stage, int(epoch), float(loss), float(lr)))
        return rows

    def add(self, stage: str, epoch: int, mean_loss: float, lr: float) -> None:
        row = (stage, epoch, mean_loss, lr)
        self.rows.append(row)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(f"{stage}\t{epoch}\t{mean_loss:.8g}\t{lr:.8g}\n")


def _batches(n: int, size: int, rng: np.random.Generator, min_size: int = 1):
    order = rng.permutation(n)
    for i in range(0, n, size):
        chunk = order[i:i + size]
        if len(chunk) >= min_size:
            yield chunk


def _adam(params, scfg: StageConfig):
    return torch.optim.Adam(params, lr=scfg.learning_rate, betas=scfg.betas)


def pretrain_global(net: NetworkState, splits: DatasetSplits, scfg: StageConfig, store: SliceStore,
                    seed: int, log: Optional[EpochLog] = None) -> NetworkState:
    """Train encoder + global head on all training volumes, labels ignored."""
    if scfg.stage != "global":
        raise ValueError(f"expected a global stage config, got {scfg.stage}")
    slices = store.slices(splits.train, with_labels=False)
    if not slices:
        raise ValueError("global pretraining needs a non-empty training set")
    if scfg.batch_pairs == 1:
        logger.warning("batch_pairs=1: the global loss is identically zero, nothing will be learned")
    log = log or EpochLog()
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 1])
    m = net.module
    m.train()
    opt = _adam(list(m.encoder.parameters()) + list(m.global_head.parameters()), scfg)
    for epoch in range(1, scfg.epochs + 1):
        losses = []
        for idx in _batches(len(slices), scfg.batch_pairs, rng):
            batch = make_batch([slices[i] for i in idx], scfg.augment_policy, rng, keep_labels=False)
            loss = global_contrastive_loss(forward_global(net, batch), batch.pair_index, scfg.tau)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.add("global", epoch, float(np.mean(losses)), scfg.learning_rate)
    net.stage_tag = "global_pretrained"
    net.epoch = scfg.epochs
    net.history.extend(r for r in log.rows if r[0] == "global")
    return net


def _labels_at_level(labels: np.ndarray, level: int) -> np.ndarray:
    f = 2 ** (level - 1)
    return labels[:, ::f, ::f]


def pretrain_local(net: NetworkState, splits: DatasetSplits, scfg: StageConfig, store: SliceStore,
                   seed: int, log: Optional[EpochLog] = None) -> NetworkState:
    """Train encoder, decoder and local heads with the pixel-wise contrastive loss.

    The supervised variant reads labeled training volumes only; the
    self-supervised grid variant reads all training volumes without labels.
    """
    supervised = scfg.stage == "local_supervised"
    if scfg.stage not in ("local_supervised", "local_selfsup"):
        raise ValueError(f"expected a local stage config, got {scfg.stage}")
    if supervised:
        if not splits.labeled_train:
            raise ValueError("supervised local pretraining needs at least one labeled volume")
        slices = store.slices(splits.labeled_train, with_labels=True)
    else:
        if scfg.augment_policy.mode != "intensity_only":
            raise ValueError("self-supervised local loss cannot use spatial augmentation on unlabeled slices")
        slices = store.slices(splits.train, with_labels=False)
    if not slices:
        raise ValueError("local pretraining received no slices")
    log = log or EpochLog()
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 2])
    m = net.module
    m.train()
    params = [p for name, p in m.named_parameters() if not name.startswith("global_head")]
    opt = _adam(params, scfg)
    skipped = 0
    for epoch in range(1, scfg.epochs + 1):
        losses = []
        for idx in _batches(len(slices), scfg.batch_pairs, rng):
            batch = make_batch([slices[i] for i in idx], scfg.augment_policy, rng,
                               keep_labels=supervised)
            feats = forward_local(net, batch, scfg.level)
            labels = None if batch.labels is None else _labels_at_level(batch.labels, scfg.level)
            maps = feature_maps(feats, labels)
            sets = build_contrast_sets(maps, scfg.strategy, stride=scfg.stride,
                                       block_size=scfg.block_size, grid_points=scfg.grid_points,
                                       pair_index=batch.pair_index)
            if sets.num_anchors == 0:
                skipped += 1
                losses.append(0.0)
                continue
            loss = local_contrastive_loss(maps, sets, scfg.tau, scfg.positive_inside_log)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.add(scfg.stage, epoch, float(np.mean(losses)), scfg.learning_rate)
    if skipped:
        logger.warning("%d local batch(es) had no anchors and were skipped", skipped)
    net.stage_tag = "local_pretrained"
    net.epoch = scfg.epochs
    net.history.extend(r for r in log.rows if r[0] == scfg.stage)
    return net


def segmentation_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy plus soft Dice over all classes, equally weighted."""
    ce = F.cross_entropy(logits, target)
    probs = logits.softmax(dim=1)
    onehot = F.one_hot(target, logits.shape[1]).permute(0, 3, 1, 2).to(probs.dtype)
    inter = (probs * onehot).sum(dim=(0, 2, 3))
    denom = probs.sum(dim=(0, 2, 3)) + onehot.sum(dim=(0, 2, 3))
    soft_dice = (2 * inter + 1.0) / (denom + 1.0)
    return ce + (1.0 - soft_dice.mean())


def evaluate_volumes(net: NetworkState, store: SliceStore, ids: Sequence[str],
                     batch_size: int = 64) -> tuple[np.ndarray, float, list]:
    """Volume-pooled Dice for each id; returns (per-class mean, mean Dice, per-volume rows)."""
    k = net.config.num_classes
    rows = []
    for vid in ids:
        imgs, labs = store.volume_stack(vid)
        pred = predict_segmentation(net, imgs, batch_size)
        rows.append(dice_score(pred, labs, k))
    per_class, mean = mean_over_volumes(rows)
    return per_class, mean, rows


def finetune(net: NetworkState, splits: DatasetSplits, scfg: StageConfig, store: SliceStore,
             seed: int, log: Optional[EpochLog] = None) -> NetworkState:
    """Supervised segmentation training on labeled volumes, selecting the
    epoch with the best validation Dice."""
    if scfg.stage != "finetune":
        raise ValueError(f"expected a finetune stage config, got {scfg.stage}")
    if not splits.labeled_train:
        raise ValueError("fine-tuning needs at least one labeled volume")
    slices = store.slices(splits.labeled_train, with_labels=True)
    images = torch.from_numpy(np.stack([s.pixels for s in slices])[:, None].astype(np.float32))
    targets = torch.from_numpy(np.stack([s.labels for s in slices]).astype(np.int64))
    log = log or EpochLog()
    net.init_hash = net.content_hash()
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 3])
    m = net.module
    opt = _adam(m.parameters(), scfg)

    best_score, best_state, best_epoch = -math.inf, None, 0
    for epoch in range(1, scfg.epochs + 1):
        m.train()
        losses = []
        for idx in _batches(len(slices), scfg.batch_size, rng):
            idx_t = torch.from_numpy(np.sort(idx))
            loss = segmentation_loss(m(images[idx_t]), targets[idx_t])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.add("finetune", epoch, float(np.mean(losses)), scfg.learning_rate)
        if splits.val and (epoch % scfg.val_every == 0 or epoch == scfg.epochs):
            _, score, _ = evaluate_volumes(net, store, splits.val)
            score = -1.0 if math.isnan(score) else score
            if score > best_score:
                best_score, best_epoch = score, epoch
                best_state = copy.deepcopy(m.state_dict())
    if best_state is not None:
        m.load_state_dict(best_state)
    net.stage_tag = "finetuned"
    net.epoch = best_epoch or scfg.epochs
    net.history.extend(r for r in log.rows if r[0] == "finetune")
    m.eval()
    return net
