import json

import pytest

from semicontrast import experiment
from semicontrast.config import config_from_dict
from semicontrast.eval import CellResult
from semicontrast.experiment import planned_cells, run_experiment, summarize_results, variant_slug
from semicontrast.model import read_checkpoint_header
from semicontrast.plots import MissingArtifacts, emit_plots

TINY = {
    "data": {"preset": None, "resolution": 32,
             "corpus": {"num_volumes": 15, "slices_per_volume": 2, "resolution": 32}},
    "model": {"base_channels": 4, "local_head_channels": 4, "projection_dim": 8},
    "training": {"global": {"epochs": 1, "learning_rate": 1e-3},
                 "local": {"epochs": 1, "learning_rate": 1e-3},
                 "finetune": {"epochs": 2, "learning_rate": 1e-3}},
    "experiment": {"variants": ["random", "global+local(block)"], "label_fractions": [0.2],
                   "folds": 1, "embed_per_class_cap": 20},
}
REPORT_FILES = ("cells.tsv", "report.tsv", "table.md")


@pytest.fixture(scope="module")
def tiny_cfg():
    return config_from_dict(TINY)


@pytest.fixture(scope="module")
def reference_run(tiny_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("ref")
    report = run_experiment(tiny_cfg, out)
    return out, report


def test_run_writes_expected_layout(reference_run):
    out, report = reference_run
    for name in REPORT_FILES + ("config.yaml",):
        assert (out / name).is_file()
    cell = out / "cells" / "global+local_block" / "frac0.2" / "fold0"
    for name in ("result.json", "log.tsv", "local.pt", "finetuned.pt", "embeddings.tsv", "sample.npz",
                 "splits.json"):
        assert (cell / name).is_file(), name
    assert (out / "folds" / "fold0" / "global.pt").is_file()
    for fig in ("dice_bars.png", "loss_curves.png", "embeddings.png", "segmentation_frac0.2.png"):
        assert (out / "figures" / fig).is_file()
    assert len(report.cells) == 2


def test_checkpoint_lineage(reference_run):
    out, _ = reference_run
    cell = out / "cells" / "global+local_block" / "frac0.2" / "fold0"
    result = json.loads((cell / "result.json").read_text())
    local_hash = read_checkpoint_header(cell / "local.pt")["content_hash"]
    ft = read_checkpoint_header(cell / "finetuned.pt")
    assert result["checkpoints"]["init"] == local_hash == ft["init_hash"]
    assert result["checkpoints"]["finetuned"] == ft["content_hash"]
    assert ft["stage_tag"] == "finetuned"
    random_cell = json.loads((out / "cells" / "random" / "frac0.2" / "fold0" / "result.json").read_text())
    assert set(random_cell["checkpoints"]) == {"init", "finetuned"}


def test_rerun_skips_completed_cells(reference_run, tiny_cfg, monkeypatch):
    out, _ = reference_run
    before = {n: (out / n).read_bytes() for n in REPORT_FILES}

    def boom(*a, **k):
        raise AssertionError("completed cell was recomputed")

    monkeypatch.setattr(experiment, "run_variant", boom)
    run_experiment(tiny_cfg, out, plots=False)
    assert {n: (out / n).read_bytes() for n in REPORT_FILES} == before


def test_failure_is_recorded_and_resume_matches_uninterrupted(reference_run, tiny_cfg, tmp_path, monkeypatch):
    ref_out, _ = reference_run
    real = experiment.run_variant

    def flaky(ws, variant, fraction, fold):
        if variant == "global+local(block)":
            raise RuntimeError("simulated crash")
        return real(ws, variant, fraction, fold)

    monkeypatch.setattr(experiment, "run_variant", flaky)
    report = run_experiment(tiny_cfg, tmp_path, plots=False)
    failed = [c for c in report.cells.values() if c.status == "failed"]
    assert len(failed) == 1 and "simulated crash" in failed[0].error
    assert (tmp_path / "cells" / "random" / "frac0.2" / "fold0" / "result.json").exists()

    monkeypatch.setattr(experiment, "run_variant", real)
    run_experiment(tiny_cfg, tmp_path, plots=False)
    for name in REPORT_FILES:
        assert (tmp_path / name).read_bytes() == (ref_out / name).read_bytes(), name


def test_plots_are_byte_identical_on_rerun(reference_run):
    out, _ = reference_run
    first = {p.name: p.read_bytes() for p in emit_plots(out)}
    second = {p.name: p.read_bytes() for p in emit_plots(out)}
    assert first == second and len(first) == 4


def test_plots_list_missing_artifacts(reference_run, tmp_path):
    out, _ = reference_run
    for name in ("report.tsv", "cells.tsv", "config.yaml"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    written = emit_plots(tmp_path)
    assert any(p.name == "dice_bars.png" for p in written)
    missing = (tmp_path / "figures" / "MISSING.txt").read_text()
    assert "cells/random/frac0.2" in missing and "sample.npz" in missing


def test_plots_on_empty_dir_list_expected_files(tmp_path):
    with pytest.raises(MissingArtifacts) as err:
        emit_plots(tmp_path)
    assert "report.tsv" in str(err.value) and "cells.tsv" in str(err.value)


def test_summarize_results():
    cells = [CellResult("random", 0.1, 0, 0, [0.5], 0.5), CellResult("global", 0.1, 0, 0, [0.6], 0.6)]
    text = summarize_results(cells, plots=False)
    assert "| global | **0.600** |" in text
    with pytest.raises(ValueError):
        summarize_results([])


def test_planned_cells_order(tiny_cfg):
    cfg = tiny_cfg.replace(**{"experiment.folds": 2, "experiment.label_fractions": [0.2, 0.4]})
    cells = planned_cells(cfg)
    assert len(cells) == 2 * 2 * 2
    assert cells[0] == ("random", 0.2, 0)


def test_variant_slugs_are_distinct():
    from semicontrast.config import VARIANT_STAGES
    slugs = {variant_slug(v) for v in VARIANT_STAGES}
    assert len(slugs) == len(VARIANT_STAGES)
