"""Paired two-domain dataset discovery, decoding, and normalization.

Canonical on-disk layout, shared by all dataset flavors::

    <root>/{train,test}/{source,visible}/<name>.png

Pairs are matched by identical relative filename across the two domain
directories.  The identity of a pair (person ID or scene class) is the part
of the stem before the last underscore, e.g. ``p07_012.png`` -> ``p07``.
Images decode to 3 channels (grayscale is replicated), are resized with an
antialiased bilinear filter, and normalized to [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError, EmptyDatasetError, PairingError, ValidationError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "test")
DOMAIN_DIRS = ("source", "visible")


@dataclass(frozen=True)
class PairedSample:
    source_path: Path
    visible_path: Path
    identity: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    layout: str
    train: tuple[PairedSample, ...]
    test: tuple[PairedSample, ...]

    def split(self, name: str) -> tuple[PairedSample, ...]:
        if name not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {name!r}")
        return self.train if name == "train" else self.test


def identity_of(name: str) -> str:
    """Identity key of a filename: the stem up to the last underscore."""
    stem = Path(name).stem
    head, sep, _ = stem.rpartition("_")
    return head if sep else stem


def _list_images(directory: Path) -> dict[str, Path]:
    files = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file():
            files[p.name] = p
    return files


def _scan_split(root: Path, split: str) -> list[PairedSample]:
    source_dir = root / split / "source"
    visible_dir = root / split / "visible"
    for d in (source_dir, visible_dir):
        if not d.is_dir():
            raise DataError(f"missing dataset directory: {d}")
    sources = _list_images(source_dir)
    visibles = _list_images(visible_dir)
    orphan_sources = sorted(set(sources) - set(visibles))
    orphan_visibles = sorted(set(visibles) - set(sources))
    if orphan_sources or orphan_visibles:
        orphan = (source_dir / orphan_sources[0]) if orphan_sources \
            else (visible_dir / orphan_visibles[0])
        raise PairingError(f"unpaired image with no partner in the other domain: {orphan}")
    if not sources:
        raise EmptyDatasetError(f"no image pairs under {root / split}")
    return [
        PairedSample(source_path=sources[name], visible_path=visibles[name],
                     identity=identity_of(name), split=split)
        for name in sorted(sources)
    ]


def scan_paired_dataset(root: str | Path, layout: str = "generic_paired") -> DatasetManifest:
    """Build a deterministic, lexicographically sorted manifest of a dataset.

    For the ``whu_iip`` layout the train and test splits must not share any
    identity (subject-exclusive split).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root does not exist: {root}")
    train = _scan_split(root, "train")
    test = _scan_split(root, "test")
    if layout == "whu_iip":
        shared = {s.identity for s in train} & {s.identity for s in test}
        if shared:
            raise ValidationError(
                "whu_iip layout requires subject-exclusive splits; identities in both "
                f"train and test: {', '.join(sorted(shared))}")
    return DatasetManifest(layout=layout, train=tuple(train), test=tuple(test))


def load_image(path: str | Path, image_size: int) -> torch.Tensor:
    """Decode one image to a (1, 3, size, size) tensor in [-1, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (image_size, image_size):
                rgb = rgb.resize((image_size, image_size), Image.Resampling.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    arr = arr / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def load_pair(sample: PairedSample, image_size: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Decode one sample into (source, visible) tensors of shape (1, 3, s, s)."""
    return load_image(sample.source_path, image_size), load_image(sample.visible_path, image_size)


def denormalize(batch: torch.Tensor) -> np.ndarray:
    """Map a [-1, 1] image batch to (B, H, W, 3) uint8.

    Values outside [-1, 1] are clamped; the linear map to [0, 255] rounds
    half away from zero, so 0.0 -> 128.
    """
    if batch.ndim != 4:
        raise ValidationError(f"expected a (B, C, H, W) batch, got shape {tuple(batch.shape)}")
    arr = batch.detach().to(torch.float64).clamp(-1.0, 1.0).permute(0, 2, 3, 1).numpy()
    scaled = (arr + 1.0) * 127.5
    return np.floor(scaled + 0.5).clip(0, 255).astype(np.uint8)


def normalize_array(image: np.ndarray) -> torch.Tensor:
    """Inverse of :func:`denormalize` for one (H, W, 3) uint8 image."""
    arr = np.asarray(image, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "layout": manifest.layout,
        "pairs": [
            {"source": str(s.source_path), "visible": str(s.visible_path),
             "identity": s.identity, "split": s.split}
            for s in (*manifest.train, *manifest.test)
        ],
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(manifest), indent=2))
