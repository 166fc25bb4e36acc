import pytest
import yaml

from semicontrast.config import (
    OUTPUT_ROOT_ENV,
    VARIANT_STAGES,
    ConfigError,
    config_from_dict,
    dump_config,
    echo_config,
    parse_config,
    resolve_output_dir,
)
from semicontrast.experiment import planned_cells
from semicontrast.training import stage_config


def write(tmp_path, data, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def test_minimal_config_materializes_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"data": {"seed": 3}}))
    assert cfg.data.seed == 3
    assert (cfg.losses.stride, cfg.losses.block_size, cfg.losses.tau) == (4, 16, 0.1)
    assert cfg.training.global_.learning_rate == 1e-4 and cfg.training.global_.epochs == 70
    assert cfg.training.local.learning_rate == 1e-4 and cfg.training.local.epochs == 70
    assert cfg.training.finetune.learning_rate == 1e-5 and cfg.training.finetune.epochs == 120
    assert cfg.training.global_.batch_pairs == 8 and cfg.training.finetune.batch_size == 16
    assert cfg.training.betas == (0.9, 0.999)
    assert cfg.model.encoder_blocks == cfg.model.decoder_blocks == 3
    assert cfg.model.projection_dim == 128
    assert cfg.experiment.folds == 4
    assert tuple(cfg.experiment.variants) == tuple(VARIANT_STAGES)


def test_presets():
    hip = config_from_dict({"data": {"preset": "hippocampus"}})
    assert hip.data.normalized_ratios == pytest.approx((0.6, 0.2, 0.2))
    assert hip.data.resolution == 64
    assert hip.experiment.label_fractions == (0.05, 0.10, 0.20)
    mm = config_from_dict({"data": {"preset": "mmwhs"}})
    assert mm.data.normalized_ratios == pytest.approx((0.5, 0.25, 0.25))
    assert mm.data.resolution == 160
    assert mm.experiment.label_fractions == (0.10, 0.20, 0.40)
    # explicit user values win over the preset
    assert config_from_dict({"data": {"preset": "mmwhs", "resolution": 64}}).data.resolution == 64
    with pytest.raises(ConfigError, match="data.preset"):
        config_from_dict({"data": {"preset": "brats"}})


def test_stage_defaults_follow_config():
    cfg = config_from_dict({})
    g = stage_config(cfg, "global")
    assert (g.learning_rate, g.epochs, g.batch_pairs, g.tau) == (1e-4, 70, 8, 0.1)
    f = stage_config(cfg, "finetune")
    assert (f.learning_rate, f.epochs, f.batch_size) == (1e-5, 120, 16)
    loc = stage_config(cfg, "local_supervised", "block")
    assert loc.strategy == "supervised_block" and loc.block_size == 16
    ss = stage_config(cfg, "local_selfsup")
    assert ss.strategy == "selfsup_grid" and ss.augment_policy.mode == "intensity_only"


def test_block_scales_below_64():
    cfg = config_from_dict({"data": {"preset": None, "resolution": 32}})
    assert stage_config(cfg, "local_supervised").block_size == 8
    fixed = config_from_dict({"data": {"preset": None, "resolution": 32},
                              "losses": {"scale_block_to_resolution": False}})
    assert stage_config(fixed, "local_supervised").block_size == 16


@pytest.mark.parametrize("override,key", [
    ("losses.tau=0", "losses.tau"),
    ("losses.tau=-1", "losses.tau"),
    ("losses.bogus=1", "losses.bogus"),
    ("nosuch.section=1", "nosuch"),
    ("training.finetune.epochs=0", "training.finetune.epochs"),
    ("training.global.epochs=many", "training.global.epochs"),
    ("losses.grid_points=10", "losses.grid_points"),
    ("experiment.variants=[random, magic]", "experiment.variants"),
    ("data.resolution=36", "data.resolution"),
    ("model.normalize_local=3", "model.normalize_local"),
])
def test_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as err:
        config_from_dict({}, [override])
    assert err.value.key == key
    assert str(err.value).startswith(key + ":")


def test_tau_error_message_names_value():
    with pytest.raises(ConfigError, match=r"losses.tau: must be > 0 \(got 0.0\)"):
        config_from_dict({}, ["losses.tau=0"])


def test_unknown_key_in_file(tmp_path):
    with pytest.raises(ConfigError, match="model.depth: unknown key"):
        parse_config(write(tmp_path, {"model": {"depth": 5}}))


def test_schema_version_checked():
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_dict({"schema_version": 2})


def test_overrides_are_yaml_typed():
    cfg = config_from_dict({}, ["losses.tau=0.25", "experiment.label_fractions=[0.5]",
                                "training.global.epochs=3", "model.num_classes=5"])
    assert cfg.losses.tau == 0.25 and cfg.experiment.label_fractions == (0.5,)
    assert cfg.training.global_.epochs == 3 and cfg.model.num_classes == 5


def test_parsing_twice_is_equal(tmp_path):
    path = write(tmp_path, {"losses": {"tau": 0.2}, "experiment": {"folds": 2}})
    assert parse_config(path) == parse_config(path)


def test_echo_round_trip(tmp_path):
    cfg = config_from_dict({"losses": {"stride": 2}}, ["experiment.seed=9"])
    path = echo_config(cfg, tmp_path / "out")
    again = parse_config(path)
    assert again == cfg
    assert dump_config(again) == path.read_text()


def test_desk_config_parses():
    from pathlib import Path
    cfg = parse_config(Path(__file__).parent.parent / "configs" / "desk.yaml")
    assert cfg.data.corpus.num_volumes == 200 and cfg.data.corpus.slices_per_volume == 8
    assert cfg.experiment.folds == 4 and cfg.experiment.label_fractions == (0.10,)


def test_full_matrix_cardinality():
    assert len(planned_cells(config_from_dict({}))) == 7 * 3 * 4


def test_output_root_env(monkeypatch, tmp_path):
    cfg = config_from_dict({"experiment": {"output_dir": "runs/x"}})
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert str(resolve_output_dir(cfg)) == "runs/x"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_output_dir(cfg) == tmp_path / "runs/x"
