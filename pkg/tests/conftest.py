import io
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from pcsgan.config import FeatureExtractorSpec
from pcsgan.networks import build_feature_extractor

# Keep CPU math reproducible across test processes.
torch.set_num_threads(1)


def png_bytes(size: int = 4, value: int | None = None, seed: int | None = None) -> bytes:
    """A tiny in-memory PNG, either constant-valued or seeded random."""
    if value is not None:
        arr = np.full((size, size, 3), value, dtype=np.uint8)
    else:
        rng = np.random.default_rng(seed if seed is not None else 0)
        arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def make_paired_tree(root: Path, counts: dict[str, list[tuple[str, int]]],
                     image_size: int = 4, seed: int = 0) -> Path:
    """Create the canonical <root>/{split}/{source,visible}/ tree.

    ``counts`` maps split name to a list of (identity, n_images).  Every
    image is a distinct seeded random PNG so pairs are nontrivial.
    """
    k = seed
    for split, groups in counts.items():
        for domain in ("source", "visible"):
            (root / split / domain).mkdir(parents=True, exist_ok=True)
        for identity, n in groups:
            for i in range(n):
                name = f"{identity}_{i:03d}.png"
                for domain in ("source", "visible"):
                    (root / split / domain / name).write_bytes(
                        png_bytes(size=image_size, seed=k))
                    k += 1
    return root


@pytest.fixture(scope="session")
def random_fe():
    """Session-wide random-weight feature extractor at the default tap."""
    return build_feature_extractor(FeatureExtractorSpec(
        backbone="residual_classifier_random", layer="stage3", seed=0))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> Path:
    """8 train / 3 test pairs of 48x48 images for fast training runs."""
    root = tmp_path_factory.mktemp("small_ds")
    return make_paired_tree(
        root,
        {"train": [("a", 4), ("b", 4)], "test": [("c", 3)]},
        image_size=48, seed=100)


@pytest.fixture(scope="session")
def whu_fixture(tmp_path_factory) -> Path:
    """Synthetic tree with the WHU-IIP split sizes: 552 train pairs from 23
    identities, 240 test pairs from 10 disjoint identities."""
    root = tmp_path_factory.mktemp("whu_iip")
    train = [(f"p{i:02d}", 24) for i in range(23)]          # 23 * 24 = 552
    test = [(f"q{i:02d}", 24) for i in range(10)]           # 10 * 24 = 240
    return make_paired_tree(root, {"train": train, "test": test})


@pytest.fixture(scope="session")
def rgb_nir_fixture(tmp_path_factory) -> Path:
    """Synthetic tree with the RGB-NIR split sizes: 387 train / 90 test pairs
    across 9 scene classes."""
    root = tmp_path_factory.mktemp("rgb_nir")
    train = [(f"scene{i}", 43) for i in range(9)]           # 9 * 43 = 387
    test = [(f"scene{i}", 10) for i in range(9)]            # 9 * 10 = 90
    return make_paired_tree(root, {"train": train, "test": test})
