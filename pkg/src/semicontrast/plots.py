"""Figure emission for a finished (or partial) report directory."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .eval.embeddings import EmbeddingTable
from .eval.report import read_report
from .experiment import variant_slug
from .training import EpochLog

logger = logging.getLogger(__name__)

REQUIRED = ("report.tsv", "cells.tsv")


class MissingArtifacts(FileNotFoundError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing report artifacts: " + ", ".join(self.missing))


def _cell_dirs(root: Path, variant: str, fraction: float) -> list[Path]:
    base = root / "cells" / variant_slug(variant) / f"frac{fraction:g}"
    if not base.exists():
        return []
    return sorted(base.glob("fold*"), key=lambda p: int(p.name[4:]))


def emit_plots(report_dir) -> list[Path]:
    """Write figures under ``<report_dir>/figures``.

    Raises :class:`MissingArtifacts` when the report tables are absent. Missing
    per-cell artifacts are skipped, listed in ``figures/MISSING.txt``, and the
    remaining figures are still produced.
    """
    from .eval import plotting

    root = Path(report_dir)
    missing = [name for name in REQUIRED if not (root / name).exists()]
    if missing:
        raise MissingArtifacts(str(root / m) for m in missing)

    agg = read_report(root / "report.tsv")
    variants = list(dict.fromkeys(v for v, _ in agg))
    fractions = sorted({f for _, f in agg})
    fig_dir = root / "figures"
    written, absent = [], []

    written.append(plotting.plot_dice_bars(agg, variants, fractions, fig_dir / "dice_bars.png"))

    first = fractions[0] if fractions else None
    logs, tables, num_classes = {}, {}, 2
    for v in variants:
        dirs = _cell_dirs(root, v, first)
        if not dirs:
            absent.append(f"cells/{variant_slug(v)}/frac{first:g}")
            continue
        cell = dirs[0]
        fold = cell.name
        rows = []
        for stage_log in ("global_log.tsv", "local_self_log.tsv"):
            p = root / "folds" / fold / stage_log
            if p.exists() and _uses_stage(v, stage_log):
                rows += EpochLog.read(p)
        if (cell / "log.tsv").exists():
            rows += EpochLog.read(cell / "log.tsv")
        else:
            absent.append(str(cell / "log.tsv"))
        logs[v] = rows
        if (cell / "embeddings.tsv").exists():
            tables[v] = EmbeddingTable.read_tsv(cell / "embeddings.tsv")
            if len(tables[v]):
                num_classes = max(num_classes, int(tables[v].labels.max()) + 1)
        else:
            absent.append(str(cell / "embeddings.tsv"))

    if logs:
        written.append(plotting.plot_loss_curves(logs, fig_dir / "loss_curves.png"))
    if tables:
        written.append(plotting.plot_embedding_scatter(tables, fig_dir / "embeddings.png", num_classes))

    for f in fractions:
        preds, image, truth = {}, None, None
        for v in variants:
            dirs = _cell_dirs(root, v, f)
            sample = dirs[0] / "sample.npz" if dirs else None
            if sample is None or not sample.exists():
                absent.append(f"sample.npz for {v} at {100 * f:g}%")
                continue
            with np.load(sample) as z:
                preds[v] = z["pred"]
                if image is None:
                    image, truth = z["image"], z["truth"]
        if preds:
            k = max(num_classes, int(max(p.max() for p in preds.values())) + 1, int(truth.max()) + 1)
            written.append(plotting.plot_segmentation_panel(
                image, truth, preds, fig_dir / f"segmentation_frac{f:g}.png", k))

    missing_file = fig_dir / "MISSING.txt"
    if absent:
        logger.warning("figures skipped for missing artifacts: %s", ", ".join(absent))
        missing_file.write_text("\n".join(absent) + "\n")
    elif missing_file.exists():
        missing_file.unlink()
    return written


def _uses_stage(variant: str, stage_log: str) -> bool:
    if stage_log == "global_log.tsv":
        return variant.startswith("global")
    return "local(self)" in variant
