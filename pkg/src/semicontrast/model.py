"""2-D U-Net with a global projection head and per-level local heads."""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

STAGE_TAGS = ("fresh", "global_pretrained", "local_pretrained", "finetuned")


@dataclass(frozen=True)
class NetworkConfig:
    encoder_blocks: int = 3
    decoder_blocks: int = 3
    base_channels: int = 32
    num_classes: int = 4
    projection_dim: int = 128
    local_head_channels: int = 32
    normalize_local: bool = True

    def validate(self) -> None:
        if self.encoder_blocks < 1 or self.decoder_blocks != self.encoder_blocks:
            raise ValueError(
                f"encoder_blocks ({self.encoder_blocks}) and decoder_blocks "
                f"({self.decoder_blocks}) must be equal and >= 1"
            )
        if self.projection_dim < 2:
            raise ValueError(f"projection_dim must be >= 2, got {self.projection_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_channels < 1 or self.local_head_channels < 1:
            raise ValueError("channel counts must be positive")


def _norm(ch: int) -> nn.GroupNorm:
    # per-sample statistics: outputs never depend on batch composition
    return nn.GroupNorm(min(8, ch), ch)


class ConvBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
        )


class Encoder(nn.Module):
    def __init__(self, blocks: int, base: int):
        super().__init__()
        chans = [base * 2**i for i in range(blocks)]
        self.blocks = nn.ModuleList(
            ConvBlock(cin, cout) for cin, cout in zip([1] + chans[:-1], chans)
        )
        self.bottleneck = ConvBlock(chans[-1], chans[-1] * 2)
        self.out_channels = chans[-1] * 2

    def forward(self, x):
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return self.bottleneck(x), skips


class UpBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, 2, stride=2)
        self.conv = ConvBlock(2 * cout, cout)

    def forward(self, x, skip):
        return self.conv(torch.cat([self.up(x), skip], dim=1))


class Decoder(nn.Module):
    """Decoder blocks indexed by level: level 1 is the uppermost (full resolution)."""

    def __init__(self, blocks: int, base: int):
        super().__init__()
        # stored deepest first; level l lives at index blocks - l
        self.blocks = nn.ModuleList(
            UpBlock(base * 2 ** (lvl), base * 2 ** (lvl - 1)) for lvl in range(blocks, 0, -1)
        )

    def forward(self, x, skips, stop_level: int = 1):
        n = len(self.blocks)
        for i, block in enumerate(self.blocks):
            x = block(x, skips[n - 1 - i])
            if n - i == stop_level:
                break
        return x


def _pointwise_head(cin: int, c: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, c, 1), nn.ReLU(inplace=True), nn.Conv2d(c, c, 1))


class UNet(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        base, nb = cfg.base_channels, cfg.encoder_blocks
        self.encoder = Encoder(nb, base)
        self.global_head = nn.Sequential(
            nn.Linear(self.encoder.out_channels, self.encoder.out_channels),
            nn.ReLU(inplace=True),
            nn.Linear(self.encoder.out_channels, cfg.projection_dim),
        )
        self.decoder = Decoder(nb, base)
        # level-1 head feeds the prediction layer, so its output is the
        # pixel embedding right before the final 1x1 convolution
        self.local_heads = nn.ModuleDict(
            {str(lvl): _pointwise_head(base * 2 ** (lvl - 1), cfg.local_head_channels)
             for lvl in range(1, nb + 1)}
        )
        self.classifier = nn.Conv2d(cfg.local_head_channels, cfg.num_classes, 1)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape (N, 1, H, W), got {tuple(x.shape)}")
        f = 2 ** self.cfg.encoder_blocks
        if x.shape[-1] % f or x.shape[-2] % f:
            raise ValueError(
                f"input size {tuple(x.shape[-2:])} not divisible by 2^{self.cfg.encoder_blocks}={f}"
            )

    def project_global(self, x):
        self.check_input(x)
        h, _ = self.encoder(x)
        z = self.global_head(h.mean(dim=(2, 3)))
        return F.normalize(z, dim=1)

    def local_features(self, x, level: int = 1, normalize: Optional[bool] = None):
        if not 1 <= level <= self.cfg.decoder_blocks:
            raise ValueError(f"level must be in [1, {self.cfg.decoder_blocks}], got {level}")
        self.check_input(x)
        h, skips = self.encoder(x)
        f = self.local_heads[str(level)](self.decoder(h, skips, stop_level=level))
        if self.cfg.normalize_local if normalize is None else normalize:
            f = F.normalize(f, dim=1)
        return f

    def forward(self, x):
        self.check_input(x)
        h, skips = self.encoder(x)
        return self.classifier(self.local_heads["1"](self.decoder(h, skips)))


@dataclass
class NetworkState:
    module: UNet
    stage_tag: str = "fresh"
    seed: int = 0
    epoch: int = 0
    init_hash: Optional[str] = None
    history: list = field(default_factory=list)

    @property
    def config(self) -> NetworkConfig:
        return self.module.cfg

    def parameters(self) -> dict:
        return {k: v.detach().clone() for k, v in self.module.state_dict().items()}

    def content_hash(self) -> str:
        return state_hash(self.module.state_dict())


def state_hash(state_dict) -> str:
    h = hashlib.sha256()
    for name in sorted(state_dict):
        t = state_dict[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def build_network(cfg: NetworkConfig, seed: int) -> NetworkState:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = UNet(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return NetworkState(net, "fresh", seed)


def _as_tensor(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        x = images
    else:
        x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    if x.dim() == 3:
        x = x[:, None]
    return x


def forward_global(net: NetworkState, batch) -> torch.Tensor:
    """Unit-norm projections z (len(batch), projection_dim) of each view."""
    images = batch.images if hasattr(batch, "images") else batch
    return net.module.project_global(_as_tensor(images))


def forward_local(net: NetworkState, batch, level: int = 1) -> torch.Tensor:
    """Per-pixel embeddings (len(batch), c, H / 2^(level-1), W / 2^(level-1))."""
    images = batch.images if hasattr(batch, "images") else batch
    return net.module.local_features(_as_tensor(images), level)


@torch.no_grad()
def predict_segmentation(net: NetworkState, slices, batch_size: int = 64) -> np.ndarray:
    """Argmax class map for each slice, shape (N, H, W)."""
    was_training = net.module.training
    net.module.eval()
    imgs = np.stack([s.pixels if hasattr(s, "pixels") else s for s in slices])
    out = []
    for i in range(0, len(imgs), batch_size):
        logits = net.module(_as_tensor(imgs[i:i + batch_size]))
        out.append(logits.argmax(dim=1).numpy())
    net.module.train(was_training)
    return np.concatenate(out).astype(np.int64)


def transfer_encoder(src: NetworkState, dst: NetworkState) -> None:
    dst.module.encoder.load_state_dict(src.module.encoder.state_dict())


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(net: NetworkState, path) -> str:
    """Write a checkpoint and return the content hash of its parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = net.content_hash()
    header = {
        "config": asdict(net.config),
        "stage_tag": net.stage_tag,
        "seed": net.seed,
        "epoch": net.epoch,
        "init_hash": net.init_hash,
        "content_hash": digest,
    }
    buf = io.BytesIO()
    torch.save({"header": header, "state_dict": net.module.state_dict()}, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return digest


def read_checkpoint_header(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=True)["header"]


def load_checkpoint(path, expected: Optional[NetworkConfig] = None) -> NetworkState:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    header = blob["header"]
    cfg = NetworkConfig(**header["config"])
    if expected is not None and cfg != expected:
        diff = {k: (v, getattr(expected, k)) for k, v in asdict(cfg).items()
                if getattr(expected, k) != v}
        raise ValueError(f"checkpoint {path} config mismatch (stored, expected): {diff}")
    net = UNet(cfg)
    net.load_state_dict(blob["state_dict"])
    state = NetworkState(net, header["stage_tag"], header["seed"], header["epoch"], header["init_hash"])
    if state.content_hash() != header["content_hash"]:
        raise ValueError(f"checkpoint {path} content hash does not match its header")
    return state
