"""Per-cell results, fold aggregation and the variant x fraction table."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CELLS_HEADER = "# variant\tfraction\tfold\tseed\tmean_dice\tper_class_dice (comma-separated, nan = class absent)"
REPORT_HEADER = "# variant\tfraction\tn_folds\tmean_dice\tstd_dice\tmin_dice\tmax_dice"


@dataclass
class CellResult:
    variant: str
    fraction: float
    fold: int
    seed: int
    per_class: list
    mean_dice: float
    status: str = "ok"
    wall_time: float = 0.0
    checkpoints: dict = field(default_factory=dict)
    error: str = ""

    def to_json(self) -> dict:
        return {
            "variant": self.variant, "fraction": self.fraction, "fold": self.fold, "seed": self.seed,
            "per_class_dice": [None if math.isnan(x) else x for x in self.per_class],
            "mean_dice": None if math.isnan(self.mean_dice) else self.mean_dice,
            "status": self.status, "wall_time": self.wall_time,
            "checkpoints": self.checkpoints, "error": self.error,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CellResult":
        nan = float("nan")
        return cls(d["variant"], float(d["fraction"]), int(d["fold"]), int(d["seed"]),
                   [nan if x is None else float(x) for x in d["per_class_dice"]],
                   nan if d["mean_dice"] is None else float(d["mean_dice"]),
                   d.get("status", "ok"), float(d.get("wall_time", 0.0)),
                   d.get("checkpoints", {}), d.get("error", ""))

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)


@dataclass
class MetricsReport:
    cells: dict = field(default_factory=dict)  # (variant, fraction, fold) -> CellResult
    variants: tuple = ()
    fractions: tuple = ()

    def add(self, cell: CellResult) -> None:
        self.cells[(cell.variant, cell.fraction, cell.fold)] = cell
        if cell.variant not in self.variants:
            self.variants = self.variants + (cell.variant,)
        if cell.fraction not in self.fractions:
            self.fractions = self.fractions + (cell.fraction,)

    def fold_scores(self, variant: str, fraction: float) -> list[float]:
        return [c.mean_dice for (v, f, _), c in sorted(self.cells.items())
                if v == variant and f == fraction and c.status == "ok" and not math.isnan(c.mean_dice)]

    def aggregates(self) -> dict:
        """(variant, fraction) -> (mean, population std, min, max, n_folds)."""
        out = {}
        for v in self.variants:
            for f in self.fractions:
                s = self.fold_scores(v, f)
                if s:
                    a = np.array(s)
                    out[(v, f)] = (float(a.mean()), float(a.std()), float(a.min()), float(a.max()), len(s))
        return out


def _frac_label(f: float) -> str:
    return f"{100 * f:g}%"


def render_table(report: MetricsReport, with_std: bool = True) -> str:
    """Markdown grid of mean Dice, per-column maximum in bold, blanks for missing cells."""
    agg = report.aggregates()
    header = "| method | " + " | ".join(_frac_label(f) for f in report.fractions) + " |"
    rule = "|---|" + "---|" * len(report.fractions)
    best = {}
    for f in report.fractions:
        means = [agg[(v, f)][0] for v in report.variants if (v, f) in agg]
        best[f] = max(means) if means else None
    lines = [header, rule]
    for v in report.variants:
        cells = []
        for f in report.fractions:
            if (v, f) not in agg:
                cells.append("")
                continue
            mean, std, _, _, n = agg[(v, f)]
            text = f"{mean:.3f}"
            if mean == best[f]:
                text = f"**{text}**"
            if with_std and n > 1:
                text += f" ± {std:.3f}"
            cells.append(text)
        lines.append(f"| {v} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def write_report(report: MetricsReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cell_lines = [CELLS_HEADER]
    for key in sorted(report.cells):
        c = report.cells[key]
        if c.status != "ok":
            continue
        cell_lines.append("\t".join([c.variant, f"{c.fraction:g}", str(c.fold), str(c.seed),
                                     _fmt(c.mean_dice), ",".join(_fmt(x) for x in c.per_class)]))
    agg = report.aggregates()
    rep_lines = [REPORT_HEADER]
    for v in report.variants:
        for f in report.fractions:
            if (v, f) in agg:
                mean, std, lo, hi, n = agg[(v, f)]
                rep_lines.append("\t".join([v, f"{f:g}", str(n), _fmt(mean), _fmt(std), _fmt(lo), _fmt(hi)]))
    paths = {
        "cells": out / "cells.tsv",
        "report": out / "report.tsv",
        "table": out / "table.md",
    }
    paths["cells"].write_text("\n".join(cell_lines) + "\n")
    paths["report"].write_text("\n".join(rep_lines) + "\n")
    paths["table"].write_text(render_table(report))
    return paths


def read_report(path) -> dict:
    """Parse report.tsv back into (variant, fraction) -> (mean, std, min, max, n)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        v, f, n, mean, std, lo, hi = line.split("\t")
        out[(v, float(f))] = (float(mean), float(std), float(lo), float(hi), int(n))
    return out
