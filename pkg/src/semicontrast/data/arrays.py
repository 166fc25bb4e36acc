"""Array-directory ingestion format.

One directory per volume::

    <root>/<volume_id>/image.raw    little-endian float32, C order
    <root>/<volume_id>/labels.raw   little-endian int32, C order (optional)
    <root>/<volume_id>/meta.json    {"id", "shape", "dtype", "labels_dtype", "has_labels"}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import Volume

IMAGE_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<i4")


def write_volume_dir(v: Volume, root) -> Path:
    d = Path(root) / v.id
    d.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(v.voxels, dtype=IMAGE_DTYPE).tofile(d / "image.raw")
    meta = {
        "id": v.id,
        "shape": list(v.voxels.shape),
        "dtype": "float32-le",
        "has_labels": v.labels is not None,
    }
    if v.labels is not None:
        np.ascontiguousarray(v.labels, dtype=LABEL_DTYPE).tofile(d / "labels.raw")
        meta["labels_dtype"] = "int32-le"
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_volume_dir(d) -> Volume:
    d = Path(d)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} missing")
    meta = json.loads(meta_path.read_text())
    shape = tuple(int(s) for s in meta["shape"])
    if len(shape) != 3:
        raise ValueError(f"{d}: shape must have 3 entries, got {shape}")
    if meta.get("dtype", "float32-le") != "float32-le":
        raise ValueError(f"{d}: unsupported image dtype {meta['dtype']!r}")
    voxels = np.fromfile(d / "image.raw", dtype=IMAGE_DTYPE)
    if voxels.size != int(np.prod(shape)):
        raise ValueError(f"{d}: image.raw has {voxels.size} values, expected shape {shape}")
    labels = None
    if meta.get("has_labels", (d / "labels.raw").exists()):
        labels = np.fromfile(d / "labels.raw", dtype=LABEL_DTYPE)
        if labels.size != voxels.size:
            raise ValueError(f"{d}: labels.raw size does not match image")
        labels = labels.reshape(shape).astype(np.int32)
    return Volume(str(meta.get("id", d.name)), voxels.reshape(shape).astype(np.float32), labels)


def write_corpus(volumes, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for v in volumes:
        write_volume_dir(v, root)
    return root


def load_array_dataset(root) -> list[Volume]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no volume directories with meta.json under {root}")
    return [read_volume_dir(p) for p in dirs]
