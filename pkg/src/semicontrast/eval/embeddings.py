"""Pixel-embedding export for cluster visualization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..model import NetworkState, _as_tensor


@dataclass
class EmbeddingTable:
    labels: np.ndarray  # (n,) ground-truth class per row
    features: np.ndarray  # (n, c), unit norm
    image_ids: list
    rows: np.ndarray  # (n,)
    cols: np.ndarray  # (n,)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def write_tsv(self, path) -> Path:
        path = Path(path)
        c = self.features.shape[1] if len(self) else 0
        header = ["label", "u", "v", "image_id"] + [f"f{k}" for k in range(c)]
        lines = ["\t".join(header)]
        for i in range(len(self)):
            vals = [str(int(self.labels[i])), str(int(self.rows[i])), str(int(self.cols[i])),
                    self.image_ids[i]] + [f"{x:.8g}" for x in self.features[i]]
            lines.append("\t".join(vals))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read_tsv(cls, path) -> "EmbeddingTable":
        lines = Path(path).read_text().splitlines()
        body = [ln.split("\t") for ln in lines[1:] if ln]
        c = len(lines[0].split("\t")) - 4
        feats = np.array([[float(x) for x in r[4:]] for r in body]).reshape(len(body), c)
        return cls(np.array([int(r[0]) for r in body], dtype=np.int64), feats,
                   [r[3] for r in body], np.array([int(r[1]) for r in body], dtype=np.int64),
                   np.array([int(r[2]) for r in body], dtype=np.int64))


@torch.no_grad()
def export_embeddings(net: NetworkState, slices, per_class_cap: int, seed: int,
                      batch_size: int = 64) -> EmbeddingTable:
    """Sample up to ``per_class_cap`` level-1 pixel embeddings per ground-truth class."""
    if any(s.labels is None for s in slices):
        raise ValueError("embedding export needs labeled slices")
    m = net.module
    was_training = m.training
    m.eval()
    feats = []
    images = np.stack([s.pixels for s in slices])
    for i in range(0, len(images), batch_size):
        f = m.local_features(_as_tensor(images[i:i + batch_size]), level=1, normalize=True)
        feats.append(f.permute(0, 2, 3, 1).numpy())
    m.train(was_training)
    feats = np.concatenate(feats)  # (N, H, W, c)
    labels = np.stack([s.labels for s in slices])

    rng = np.random.default_rng(seed)
    picks = []
    for k in range(net.config.num_classes):
        where = np.argwhere(labels == k)
        if len(where) > per_class_cap:
            where = where[np.sort(rng.choice(len(where), per_class_cap, replace=False))]
        picks.append(where)
    picks = np.concatenate(picks) if picks else np.zeros((0, 3), dtype=np.int64)
    ids = [f"{slices[i].source_volume}:{slices[i].slice_index}" for i in picks[:, 0]]
    return EmbeddingTable(labels[picks[:, 0], picks[:, 1], picks[:, 2]],
                          feats[picks[:, 0], picks[:, 1], picks[:, 2]].astype(np.float64),
                          ids, picks[:, 1], picks[:, 2], seed)


def embedding_separation(table: EmbeddingTable) -> tuple[float, float]:
    """Mean cosine similarity over same-class pairs and over different-class pairs."""
    f = table.features / np.linalg.norm(table.features, axis=1, keepdims=True)
    sim = f @ f.T
    same = table.labels[:, None] == table.labels[None, :]
    off_diag = ~np.eye(len(f), dtype=bool)
    intra = sim[same & off_diag]
    inter = sim[~same]
    return float(intra.mean()), float(inter.mean())


def principal_projection(features: np.ndarray) -> np.ndarray:
    """Project onto the top-2 principal directions with a fixed sign convention."""
    x = features - features.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    basis = vt[:2]
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return x @ basis.T
