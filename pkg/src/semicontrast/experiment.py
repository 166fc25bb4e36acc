"""Experiment matrix: folds x label fractions x method variants."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import VARIANT_STAGES, ExperimentConfig, echo_config, resolve_output_dir
from .data import CorpusSpec, generate_synthetic_corpus, load_array_dataset, split_and_select
from .eval.embeddings import EmbeddingTable, export_embeddings
from .eval.report import CellResult, MetricsReport, render_table, write_report
from .model import NetworkConfig, NetworkState, build_network, load_checkpoint, predict_segmentation, save_checkpoint
from .training import EpochLog, SliceStore, evaluate_volumes, finetune, pretrain_global, pretrain_local, stage_config

logger = logging.getLogger(__name__)


def derive_seed(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def variant_slug(variant: str) -> str:
    return re.sub(r"[^A-Za-z0-9+]+", "_", variant).strip("_")


def _frac_key(fraction: float) -> int:
    return int(round(fraction * 1_000_000))


def load_corpus(cfg: ExperimentConfig) -> list:
    d = cfg.data
    if d.source == "arrays":
        return load_array_dataset(d.path)
    c = d.corpus
    spec = CorpusSpec(c.num_volumes, c.slices_per_volume, c.resolution, c.num_foreground_classes,
                      c.noise, cfg.losses.effective_block(c.resolution), c.distractors)
    return generate_synthetic_corpus(spec, d.seed)


def infer_num_classes(cfg: ExperimentConfig, corpus) -> int:
    if cfg.model.num_classes is not None:
        return cfg.model.num_classes
    if cfg.data.source == "synthetic":
        return cfg.data.corpus.num_foreground_classes + 1
    top = max(int(v.labels.max()) for v in corpus if v.labels is not None)
    return max(top + 1, 2)


def network_config(cfg: ExperimentConfig, num_classes: int) -> NetworkConfig:
    m = cfg.model
    return NetworkConfig(m.encoder_blocks, m.decoder_blocks, m.base_channels, num_classes,
                         m.projection_dim, m.local_head_channels, m.normalize_local)


class Workspace:
    """Everything a run needs that is shared across cells: corpus, slices, network config."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg)
        self.corpus = load_corpus(cfg)
        self.num_classes = infer_num_classes(cfg, self.corpus)
        self.net_cfg = network_config(cfg, self.num_classes)
        self.store = SliceStore(self.corpus, cfg.data.resolution)
        torch.set_num_threads(cfg.training.threads)

    @property
    def seed(self) -> int:
        return self.cfg.experiment.seed

    def splits(self, fold: int, fraction: float):
        # the split seed ignores the fraction: folds share train/val/test and
        # the labeled subsets are nested across fractions
        return split_and_select(self.corpus, self.cfg.data.normalized_ratios, fraction,
                                derive_seed(self.seed, "split", fold))

    def fresh_network(self, fold: int) -> NetworkState:
        return build_network(self.net_cfg, derive_seed(self.seed, "init", fold))

    def fold_dir(self, fold: int) -> Path:
        return self.out / "folds" / f"fold{fold}"

    def cell_dir(self, variant: str, fraction: float, fold: int) -> Path:
        return self.out / "cells" / variant_slug(variant) / f"frac{fraction:g}" / f"fold{fold}"

    def cached_stage(self, path: Path, train_fn) -> NetworkState:
        if path.exists():
            return load_checkpoint(path, self.net_cfg)
        net = train_fn()
        save_checkpoint(net, path)
        return net


def _global_stage(ws: Workspace, fold: int, splits) -> NetworkState:
    d = ws.fold_dir(fold)

    def train():
        net = ws.fresh_network(fold)
        log = EpochLog(d / "global_log.tsv")
        return pretrain_global(net, splits, stage_config(ws.cfg, "global"), ws.store,
                               derive_seed(ws.seed, "global", fold), log)

    return ws.cached_stage(d / "global.pt", train)


def _selfsup_stage(ws: Workspace, fold: int, splits, start: NetworkState) -> NetworkState:
    d = ws.fold_dir(fold)

    def train():
        log = EpochLog(d / "local_self_log.tsv")
        return pretrain_local(start, splits, stage_config(ws.cfg, "local_selfsup"), ws.store,
                              derive_seed(ws.seed, "local_self", fold), log)

    return ws.cached_stage(d / "local_self.pt", train)


def run_variant(ws: Workspace, variant: str, fraction: float, fold: int) -> CellResult:
    """Execute one cell's stage sequence, evaluate on test, persist artifacts."""
    t0 = time.perf_counter()
    cdir = ws.cell_dir(variant, fraction, fold)
    cdir.mkdir(parents=True, exist_ok=True)
    splits = ws.splits(fold, fraction)
    (cdir / "splits.json").write_text(json.dumps(splits.to_dict(), indent=1) + "\n")
    checkpoints = {}
    log = EpochLog(cdir / "log.tsv")

    net = ws.fresh_network(fold)
    for stage in VARIANT_STAGES[variant]:
        if stage == "global":
            net = _global_stage(ws, fold, splits)
            checkpoints["global"] = net.content_hash()
        elif stage == "local_selfsup":
            net = _selfsup_stage(ws, fold, splits, net)
            checkpoints["local_self"] = net.content_hash()
        else:
            strategy = stage.split(":")[1]
            net = pretrain_local(net, splits, stage_config(ws.cfg, "local_supervised", strategy), ws.store,
                                 derive_seed(ws.seed, "local", fold, _frac_key(fraction)), log)
            checkpoints["local"] = save_checkpoint(net, cdir / "local.pt")

    ft_seed = derive_seed(ws.seed, "finetune", fold, _frac_key(fraction))
    net = finetune(net, splits, stage_config(ws.cfg, "finetune"), ws.store, ft_seed, log)
    checkpoints["init"] = net.init_hash
    checkpoints["finetuned"] = save_checkpoint(net, cdir / "finetuned.pt")

    per_class, mean, _ = evaluate_volumes(net, ws.store, splits.test, ws.cfg.experiment.eval_batch_size)
    test_slices = ws.store.slices(splits.test, with_labels=True)
    table = export_embeddings(net, test_slices, ws.cfg.experiment.embed_per_class_cap,
                              derive_seed(ws.seed, "embed", fold))
    table.write_tsv(cdir / "embeddings.tsv")
    _save_sample(ws, net, splits.test, cdir / "sample.npz")

    return CellResult(variant, fraction, fold, ft_seed, [float(x) for x in per_class], float(mean),
                      "ok", time.perf_counter() - t0, checkpoints)


def _save_sample(ws: Workspace, net: NetworkState, test_ids, path: Path) -> None:
    vid = sorted(test_ids)[0]
    imgs, labs = ws.store.volume_stack(vid)
    k = int(np.argmax((labs > 0).reshape(len(labs), -1).sum(axis=1)))
    pred = predict_segmentation(net, imgs[k:k + 1])[0]
    np.savez(path, image=imgs[k], truth=labs[k], pred=pred, volume=np.array(vid), slice=np.array(k))


def cell_result_path(ws: Workspace, variant: str, fraction: float, fold: int) -> Path:
    return ws.cell_dir(variant, fraction, fold) / "result.json"


def planned_cells(cfg: ExperimentConfig) -> list[tuple[str, float, int]]:
    e = cfg.experiment
    return [(v, f, k) for k in range(e.folds) for f in e.label_fractions for v in e.variants]


def run_experiment(cfg: ExperimentConfig, out_dir=None, plots: bool = True) -> MetricsReport:
    """Run (or resume) the whole matrix and write reports; completed cells are skipped."""
    ws = Workspace(cfg, out_dir)
    ws.out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, ws.out)
    report = MetricsReport(variants=tuple(cfg.experiment.variants),
                           fractions=tuple(cfg.experiment.label_fractions))
    for variant, fraction, fold in planned_cells(cfg):
        path = cell_result_path(ws, variant, fraction, fold)
        if path.exists():
            cell = CellResult.from_json(json.loads(path.read_text()))
            if cell.status == "ok":
                report.add(cell)
                continue
        logger.info("cell %s frac=%g fold=%d", variant, fraction, fold)
        try:
            cell = run_variant(ws, variant, fraction, fold)
        except Exception as exc:  # recorded per cell; the matrix keeps going
            logger.exception("cell %s frac=%g fold=%d failed", variant, fraction, fold)
            cell = CellResult(variant, fraction, fold, 0, [], math.nan, "failed", error=repr(exc))
        cell.write(path)
        report.add(cell)
    write_report(report, ws.out)
    if plots:
        from .plots import emit_plots
        emit_plots(ws.out)
    return report


def summarize_results(cells, out_dir=None, plots: bool = True) -> str:
    """Render the variant x fraction table for a set of cells (and optionally figures)."""
    cells = list(cells)
    if not cells:
        raise ValueError("summarize_results needs at least one completed cell")
    report = MetricsReport()
    for c in cells:
        report.add(c)
    text = render_table(report)
    if out_dir is not None:
        write_report(report, out_dir)
        if plots:
            from .plots import emit_plots
            emit_plots(out_dir)
    return text
