import logging

import numpy as np
import pytest
import torch

from semicontrast.config import VARIANT_STAGES
from semicontrast.data import Volume, split_and_select
from semicontrast.data.augment import AugmentPolicy
from semicontrast.model import NetworkConfig, build_network, load_checkpoint, save_checkpoint
from semicontrast.training import (
    EpochLog,
    SliceStore,
    StageConfig,
    finetune,
    pretrain_global,
    pretrain_local,
    segmentation_loss,
)

NET = NetworkConfig(base_channels=4, local_head_channels=8, projection_dim=16, num_classes=4)
INTENSITY = AugmentPolicy("intensity_only")


class SpyStore(SliceStore):
    """Records which volumes are read and whether labels were requested."""

    def __init__(self, volumes, resolution):
        super().__init__(volumes, resolution)
        self.read_ids, self.label_requests = set(), []

    def _get(self, vid):
        self.read_ids.add(vid)
        return super()._get(vid)

    def slices(self, ids, with_labels):
        self.label_requests.append(with_labels)
        return super().slices(ids, with_labels)


@pytest.fixture
def splits(small_corpus):
    return split_and_select(small_corpus, (0.6, 0.2, 0.2), 0.25, seed=3)


@pytest.fixture
def store(small_corpus):
    return SpyStore(small_corpus, 32)


def global_cfg(**kw):
    return StageConfig("global", kw.pop("learning_rate", 1e-3), kw.pop("epochs", 2),
                       batch_pairs=kw.pop("batch_pairs", 6), augment_policy=INTENSITY, **kw)


def local_cfg(stage="local_supervised", strategy="supervised_block", **kw):
    return StageConfig(stage, kw.pop("learning_rate", 1e-3), kw.pop("epochs", 2), batch_pairs=4,
                       strategy=strategy, block_size=8, augment_policy=INTENSITY, **kw)


def finetune_cfg(**kw):
    return StageConfig("finetune", kw.pop("learning_rate", 1e-3), kw.pop("epochs", 3), batch_size=8, **kw)


# -- stage isolation -----------------------------------------------------------

def test_global_stage_never_reads_labels(splits, store):
    pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=1), store, seed=0)
    assert store.label_requests == [False]
    assert store.read_ids == set(splits.train)


def test_supervised_local_reads_only_labeled(splits, store):
    pretrain_local(build_network(NET, 0), splits, local_cfg(epochs=1), store, seed=0)
    assert store.read_ids == set(splits.labeled_train)
    assert not store.read_ids & set(splits.unlabeled_train)


def test_selfsup_local_reads_all_training_without_labels(splits, store):
    cfg = local_cfg("local_selfsup", "selfsup_grid", epochs=1)
    pretrain_local(build_network(NET, 0), splits, cfg, store, seed=0)
    assert store.label_requests == [False]
    assert store.read_ids == set(splits.train)


def test_selfsup_rejects_spatial_augmentation(splits, store):
    cfg = StageConfig("local_selfsup", 1e-3, 1, strategy="selfsup_grid",
                      augment_policy=AugmentPolicy("intensity_and_spatial"))
    with pytest.raises(ValueError, match="spatial"):
        pretrain_local(build_network(NET, 0), splits, cfg, store, seed=0)


def test_finetune_never_reads_unlabeled(splits, store):
    finetune(build_network(NET, 0), splits, finetune_cfg(epochs=1), store, seed=0)
    assert not store.read_ids & set(splits.unlabeled_train)
    assert set(splits.labeled_train) <= store.read_ids


# -- errors and warnings --------------------------------------------------------------

def test_stage_config_validation():
    with pytest.raises(ValueError, match="learning_rate"):
        StageConfig("global", 0.0, 1)
    with pytest.raises(ValueError, match="epochs"):
        StageConfig("global", 1e-3, 0)
    with pytest.raises(ValueError, match="stage"):
        StageConfig("warmup", 1e-3, 1)


def test_stage_mismatch_is_rejected(splits, store):
    with pytest.raises(ValueError, match="global"):
        pretrain_global(build_network(NET, 0), splits, finetune_cfg(), store, 0)
    with pytest.raises(ValueError, match="finetune"):
        finetune(build_network(NET, 0), splits, global_cfg(), store, 0)


def test_empty_labeled_set_is_rejected(splits, store):
    from dataclasses import replace
    none_labeled = replace(splits, labeled_train=[], unlabeled_train=list(splits.train))
    with pytest.raises(ValueError, match="labeled"):
        pretrain_local(build_network(NET, 0), none_labeled, local_cfg(), store, 0)
    with pytest.raises(ValueError, match="labeled"):
        finetune(build_network(NET, 0), none_labeled, finetune_cfg(), store, 0)


def test_single_pair_batches_warn_and_give_zero_loss(splits, store, caplog):
    with caplog.at_level(logging.WARNING):
        net = pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=1, batch_pairs=1), store, 0)
    assert "batch_pairs=1" in caplog.text
    assert net.history[0][2] == 0.0


def test_all_background_corpus_completes_with_zero_loss(caplog):
    rng = np.random.default_rng(0)
    vols = [Volume(f"bg{i}", rng.standard_normal((2, 32, 32)).astype(np.float32),
                   np.zeros((2, 32, 32), np.int64)) for i in range(6)]
    sp = split_and_select(vols, (0.6, 0.2, 0.2), 1.0, seed=0)
    net = build_network(NET, 0)
    before = net.content_hash()
    with caplog.at_level(logging.WARNING):
        net = pretrain_local(net, sp, local_cfg(epochs=2), SliceStore(vols, 32), 0)
    assert [row[2] for row in net.history] == [0.0, 0.0]
    assert "no anchors" in caplog.text
    assert net.content_hash() == before
    assert net.stage_tag == "local_pretrained"


# -- loss decrease, determinism, lineage -----------------------------------------------

def test_global_loss_decreases(splits, store):
    net = pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=4), store, seed=1)
    losses = [row[2] for row in net.history]
    assert losses[-1] < losses[0]
    assert net.stage_tag == "global_pretrained"


def test_local_loss_decreases(splits, store):
    net = pretrain_local(build_network(NET, 0), splits, local_cfg(epochs=6), store, seed=1)
    losses = [row[2] for row in net.history]
    assert losses[-1] < losses[0]


def test_selfsup_loss_decreases(splits, store):
    net = pretrain_local(build_network(NET, 0), splits, local_cfg("local_selfsup", "selfsup_grid", epochs=4),
                         store, seed=1)
    losses = [row[2] for row in net.history]
    assert losses[-1] < losses[0]


def test_finetune_loss_decreases_and_records_lineage(splits, store):
    net = build_network(NET, 0)
    start = net.content_hash()
    net = finetune(net, splits, finetune_cfg(epochs=5), store, seed=1)
    losses = [row[2] for row in net.history]
    assert losses[-1] < losses[0]
    assert net.init_hash == start
    assert net.stage_tag == "finetuned"
    assert 1 <= net.epoch <= 5


def test_stages_are_deterministic(splits, store):
    a = pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=1), store, seed=4)
    b = pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=1), store, seed=4)
    assert a.content_hash() == b.content_hash()
    c = pretrain_local(a, splits, local_cfg(epochs=1), store, seed=5)
    d = pretrain_local(b, splits, local_cfg(epochs=1), store, seed=5)
    assert c.content_hash() == d.content_hash()


def test_global_stage_trains_only_encoder_and_global_head(splits, store):
    net = build_network(NET, 0)
    dec = {k: v.clone() for k, v in net.module.decoder.state_dict().items()}
    enc = {k: v.clone() for k, v in net.module.encoder.state_dict().items()}
    pretrain_global(net, splits, global_cfg(epochs=1), store, 0)
    assert all(torch.equal(v, dec[k]) for k, v in net.module.decoder.state_dict().items())
    assert any(not torch.equal(v, enc[k]) for k, v in net.module.encoder.state_dict().items())


def test_local_stage_starts_from_the_global_encoder(splits, store, tmp_path):
    g = pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=1), store, 0)
    save_checkpoint(g, tmp_path / "g.pt")
    warm = load_checkpoint(tmp_path / "g.pt", NET)
    for k, v in g.module.encoder.state_dict().items():
        assert torch.equal(v, warm.module.encoder.state_dict()[k])
    head = {k: v.clone() for k, v in warm.module.global_head.state_dict().items()}
    pretrain_local(warm, splits, local_cfg(epochs=1), store, 0)
    # the global head is not part of the local objective
    assert all(torch.equal(v, head[k]) for k, v in warm.module.global_head.state_dict().items())


def test_epoch_log_file(tmp_path, splits, store):
    log = EpochLog(tmp_path / "log.tsv")
    pretrain_global(build_network(NET, 0), splits, global_cfg(epochs=2), store, 0, log)
    rows = EpochLog.read(tmp_path / "log.tsv")
    assert [(r[0], r[1], r[3]) for r in rows] == [("global", 1, 1e-3), ("global", 2, 1e-3)]
    EpochLog(tmp_path / "log.tsv")  # reopening truncates
    assert EpochLog.read(tmp_path / "log.tsv") == []


def test_segmentation_loss_is_small_for_confident_correct_logits():
    target = torch.randint(0, 3, (2, 8, 8))
    logits = torch.nn.functional.one_hot(target, 3).permute(0, 3, 1, 2).float() * 50
    assert float(segmentation_loss(logits, target)) < 1e-3
    assert float(segmentation_loss(-logits, target)) > 1.0


def test_variant_stage_sequences():
    assert VARIANT_STAGES["random"] == ()
    assert VARIANT_STAGES["global"] == ("global",)
    assert VARIANT_STAGES["global+local(self)"] == ("global", "local_selfsup")
    assert VARIANT_STAGES["local(stride)"] == ("local_supervised:stride",)
    assert VARIANT_STAGES["local(block)"] == ("local_supervised:block",)
    assert VARIANT_STAGES["global+local(stride)"] == ("global", "local_supervised:stride")
    assert VARIANT_STAGES["global+local(block)"] == ("global", "local_supervised:block")
