import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from semicontrast.data import CorpusSpec, generate_synthetic_corpus, volume_slices
from semicontrast.eval import dice_score
from semicontrast.model import (
    NetworkConfig,
    build_network,
    forward_global,
    forward_local,
    load_checkpoint,
    predict_segmentation,
    read_checkpoint_header,
    save_checkpoint,
    transfer_encoder,
)
from semicontrast.training import segmentation_loss

SMALL = NetworkConfig(base_channels=4, local_head_channels=6, projection_dim=8, num_classes=3)


def images(n=4, side=32, seed=0):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal((n, 1, side, side)).astype(np.float32))


def test_output_shapes():
    net = build_network(SMALL, 0)
    x = images()
    assert net.module(x).shape == (4, 3, 32, 32)
    assert forward_global(net, x).shape == (4, 8)
    assert forward_local(net, x, level=1).shape == (4, 6, 32, 32)
    assert forward_local(net, x, level=2).shape == (4, 6, 16, 16)
    assert forward_local(net, x, level=3).shape == (4, 6, 8, 8)


def test_embeddings_are_unit_norm():
    net = build_network(SMALL, 0)
    x = images()
    assert_allclose(forward_global(net, x).norm(dim=1).detach().numpy(), 1.0, atol=1e-6)
    assert_allclose(forward_local(net, x).norm(dim=1).detach().numpy(), 1.0, atol=1e-6)


def test_unnormalized_local_features_option():
    net = build_network(SMALL, 0)
    f = net.module.local_features(images(), 1, normalize=False)
    assert not torch.allclose(f.norm(dim=1), torch.ones(()))


def test_construction_is_seeded_and_leaves_global_rng_alone():
    torch.manual_seed(123)
    before = torch.rand(3)
    torch.manual_seed(123)
    a = build_network(SMALL, 5)
    after = torch.rand(3)
    assert torch.equal(before, after)
    assert a.content_hash() == build_network(SMALL, 5).content_hash()
    assert a.content_hash() != build_network(SMALL, 6).content_hash()


def test_forward_is_deterministic():
    net = build_network(SMALL, 1)
    x = images()
    assert torch.equal(net.module(x), net.module(x))


def test_batch_composition_does_not_change_outputs():
    net = build_network(SMALL, 1)
    net.module.eval()
    x = images(4)
    full = net.module(x)
    assert_allclose(net.module(x[1:2]).detach().numpy(), full[1:2].detach().numpy(), atol=1e-5)


@pytest.mark.parametrize("side", [30, 36])
def test_indivisible_input_is_rejected(side):
    net = build_network(SMALL, 0)
    with pytest.raises(ValueError, match="divisible"):
        net.module(images(side=side))


def test_bad_level_and_config():
    net = build_network(SMALL, 0)
    with pytest.raises(ValueError, match="level"):
        forward_local(net, images(), level=4)
    with pytest.raises(ValueError):
        build_network(NetworkConfig(encoder_blocks=3, decoder_blocks=2), 0)
    with pytest.raises(ValueError):
        build_network(NetworkConfig(num_classes=1), 0)


def test_transfer_encoder_copies_only_encoder():
    src, dst = build_network(SMALL, 1), build_network(SMALL, 2)
    dec_before = {k: v.clone() for k, v in dst.module.decoder.state_dict().items()}
    transfer_encoder(src, dst)
    for k, v in src.module.encoder.state_dict().items():
        assert torch.equal(v, dst.module.encoder.state_dict()[k])
    for k, v in dst.module.decoder.state_dict().items():
        assert torch.equal(v, dec_before[k])


def test_checkpoint_round_trip(tmp_path):
    net = build_network(SMALL, 3)
    net.stage_tag, net.epoch, net.init_hash = "global_pretrained", 6, "abc"
    digest = save_checkpoint(net, tmp_path / "a.pt")
    assert digest == net.content_hash()
    back = load_checkpoint(tmp_path / "a.pt", SMALL)
    assert back.content_hash() == digest
    assert (back.stage_tag, back.epoch, back.init_hash, back.seed) == ("global_pretrained", 6, "abc", 3)
    assert read_checkpoint_header(tmp_path / "a.pt")["content_hash"] == digest
    x = images()
    assert torch.equal(back.module(x), net.module(x))


def test_checkpoint_bytes_are_reproducible(tmp_path):
    save_checkpoint(build_network(SMALL, 3), tmp_path / "a.pt")
    save_checkpoint(build_network(SMALL, 3), tmp_path / "b.pt")
    assert (tmp_path / "a.pt").read_bytes() == (tmp_path / "b.pt").read_bytes()


def test_checkpoint_config_mismatch(tmp_path):
    save_checkpoint(build_network(SMALL, 3), tmp_path / "a.pt")
    other = NetworkConfig(base_channels=8, local_head_channels=6, projection_dim=8, num_classes=3)
    with pytest.raises(ValueError, match="mismatch"):
        load_checkpoint(tmp_path / "a.pt", other)


def test_checkpoint_tampering_detected(tmp_path):
    net = build_network(SMALL, 3)
    save_checkpoint(net, tmp_path / "a.pt")
    blob = torch.load(tmp_path / "a.pt", weights_only=True)
    blob["state_dict"]["classifier.bias"] += 1.0
    torch.save(blob, tmp_path / "a.pt")
    with pytest.raises(ValueError, match="hash"):
        load_checkpoint(tmp_path / "a.pt")


def test_overfits_a_single_volume():
    vol = generate_synthetic_corpus(CorpusSpec(num_volumes=1, slices_per_volume=4, resolution=32,
                                               num_foreground_classes=2, noise=0.1), 0)[0]
    slices = volume_slices(vol, 32)
    x = torch.from_numpy(np.stack([s.pixels for s in slices])[:, None])
    y = torch.from_numpy(np.stack([s.labels for s in slices]).astype(np.int64))
    torch.manual_seed(0)
    net = build_network(NetworkConfig(base_channels=8, local_head_channels=8, num_classes=3), 0)
    opt = torch.optim.Adam(net.module.parameters(), lr=3e-3)
    net.module.train()
    for _ in range(150):
        loss = segmentation_loss(net.module(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    pred = predict_segmentation(net, slices)
    _, mean = dice_score(pred, y.numpy(), 3)
    assert mean > 0.95


def test_duplicate_image_gives_identical_projection():
    net = build_network(SMALL, 0)
    net.module.eval()
    x = images(3)
    z = forward_global(net, torch.cat([x, x[:1]]))
    assert torch.equal(z[0], z[3])


def test_prediction_range_shape_and_determinism():
    net = build_network(SMALL, 2)
    x = images(5, side=40).numpy()[:, 0]
    a = predict_segmentation(net, x, batch_size=2)
    b = predict_segmentation(net, x, batch_size=5)
    assert a.shape == (5, 40, 40)
    assert a.min() >= 0 and a.max() < SMALL.num_classes
    assert np.array_equal(a, b)
