"""Full-reference image quality metrics and dataset-level evaluation.

All metrics consume 8-bit images (H, W, 3) or (H, W) on the 0..255 scale;
dataset evaluation reports the arithmetic mean of per-image values, never
the metric of averaged images.  SSIM follows the classic recipe: 11x11
Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 255,
statistics taken only where the window fully fits, channels averaged.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .data import DatasetManifest, denormalize, load_pair
from .errors import EmptyDatasetError, ValidationError
from .fileio import atomic_write_text

PSNR_CAP_DB = 100.0  # sentinel reported when MSE is exactly 0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0

# Canonical five-scale weights for the multiscale index.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIZE = (2 ** (len(MS_SSIM_WEIGHTS) - 1)) * SSIM_WINDOW  # 176

METRIC_COLUMNS = ("ssim", "ms_ssim", "psnr_db", "mse", "lpips")
# Print/report order used by the summary tables: SSIM, MSE, PSNR, LPIPS, MS-SSIM.
TABLE_ORDER = ("ssim", "mse", "psnr_db", "lpips", "ms_ssim")


def _as_planes(a: np.ndarray) -> np.ndarray:
    """View an (H, W) or (H, W, C) image as (C, H, W) float64 planes."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3:
        return np.moveaxis(arr, -1, 0)
    raise ValidationError(f"expected an (H, W) or (H, W, C) image, got shape {arr.shape}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ValidationError(
            f"image shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all pixels and channels, 0..255 scale."""
    _check_pair(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(255^2 / mse) in dB; identical images report the 100 dB cap."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(DYNAMIC_RANGE ** 2 / err)


def _gaussian_kernel(window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window, dtype=np.float64) - half
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation, keeping only fully covered positions."""
    out = correlate1d(plane, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    r = len(kernel) // 2
    return out[r:-r, r:-r]


def _ssim_parts(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position luminance and contrast-structure maps for one channel."""
    kernel = _gaussian_kernel()
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    sigma_x2 = _filter_valid(x * x, kernel) - mu_x ** 2
    sigma_y2 = _filter_valid(y * y, kernel) - mu_y ** 2
    sigma_xy = _filter_valid(x * y, kernel) - mu_x * mu_y
    luminance = (2.0 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    contrast_structure = (2.0 * sigma_xy + c2) / (sigma_x2 + sigma_y2 + c2)
    return luminance, contrast_structure


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity, averaged over channels."""
    _check_pair(a, b)
    planes_a, planes_b = _as_planes(a), _as_planes(b)
    h, w = planes_a.shape[1:]
    if min(h, w) < SSIM_WINDOW:
        raise ValidationError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    values = []
    for x, y in zip(planes_a, planes_b):
        luminance, cs = _ssim_parts(x, y)
        values.append(float(np.mean(luminance * cs)))
    return float(np.mean(values))


def _downsample2(plane: np.ndarray) -> np.ndarray:
    """2x2 average pooling; trailing odd row/column is dropped."""
    h, w = plane.shape
    plane = plane[: h - h % 2, : w - w % 2]
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Five-scale multiscale structural similarity.

    Contrast-structure means are collected at every scale (downsampling by
    2x2 average pooling in between) and combined as a weighted product with
    the full SSIM at the coarsest scale; negative factors are clamped to 0
    before exponentiation.
    """
    _check_pair(a, b)
    planes_a, planes_b = _as_planes(a), _as_planes(b)
    h, w = planes_a.shape[1:]
    if min(h, w) < MS_SSIM_MIN_SIZE:
        raise ValidationError(
            f"image {h}x{w} is smaller than the multiscale minimum "
            f"{MS_SSIM_MIN_SIZE} ({len(MS_SSIM_WEIGHTS)} scales of the "
            f"{SSIM_WINDOW}-pixel window)")
    values = []
    for x, y in zip(planes_a, planes_b):
        result = 1.0
        for scale, weight in enumerate(MS_SSIM_WEIGHTS):
            last = scale == len(MS_SSIM_WEIGHTS) - 1
            luminance, cs = _ssim_parts(x, y)
            factor = float(np.mean(luminance * cs)) if last else float(np.mean(cs))
            result *= max(factor, 0.0) ** weight
            if not last:
                x, y = _downsample2(x), _downsample2(y)
        values.append(result)
    return float(np.mean(values))


def lpips(a: np.ndarray, b: np.ndarray, meter) -> float:
    """Learned perceptual distance between two 8-bit images (see lpips module)."""
    _check_pair(a, b)
    return meter.distance(a, b)


@dataclass(frozen=True)
class MetricReport:
    """Per-image metric rows plus their arithmetic means."""

    per_image: tuple[dict, ...]
    aggregate: dict
    aggregation_note: str = "per-image means"
    lpips_calibrated: bool = True

    def to_dict(self) -> dict:
        return {
            "aggregation_note": self.aggregation_note,
            "lpips_calibrated": self.lpips_calibrated,
            "aggregate": self.aggregate,
            "per_image": list(self.per_image),
        }

    def write_json(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path: str | Path) -> None:
        """One row per image, in manifest order; columns are exactly the
        five metric names (ids and aggregates live in the JSON report)."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(METRIC_COLUMNS)
        for row in self.per_image:
            writer.writerow([repr(row[c]) for c in METRIC_COLUMNS])
        atomic_write_text(path, buf.getvalue())

    def table_row(self) -> str:
        cells = [f"{self.aggregate[c]:.4f}" for c in TABLE_ORDER]
        return "  ".join(f"{name.upper()}={value}" for name, value in zip(TABLE_ORDER, cells))


def _aggregate(rows: list[dict]) -> dict:
    return {c: float(np.mean([r[c] for r in rows])) for c in METRIC_COLUMNS}


def evaluate_pair(out_image: np.ndarray, gt_image: np.ndarray, lpips_meter) -> dict:
    return {
        "ssim": ssim(out_image, gt_image),
        "ms_ssim": ms_ssim(out_image, gt_image),
        "psnr_db": psnr(out_image, gt_image),
        "mse": mse(out_image, gt_image),
        "lpips": lpips(out_image, gt_image, lpips_meter),
    }


def evaluate_dataset(
    generator: Callable[[torch.Tensor], torch.Tensor],
    manifest: DatasetManifest,
    lpips_meter,
    image_size: int = 256,
    split: str = "test",
    progress: Optional[Callable[[str], None]] = None,
) -> MetricReport:
    """Translate every source image of a split and score it against its pair.

    The generator maps source-domain batches to visible-domain batches;
    outputs are quantized to 8 bits before any metric is computed.  Rows are
    reported in manifest order.
    """
    samples = manifest.split(split)
    if not samples:
        raise EmptyDatasetError(f"the {split!r} split is empty")
    rows: list[dict] = []
    for sample in samples:
        pair_id = sample.source_path.stem
        try:
            src, vis = load_pair(sample, image_size)
            with torch.no_grad():
                out = generator(src)
            out_image = denormalize(out)[0]
            gt_image = denormalize(vis)[0]
            row = {"pair_id": pair_id, **evaluate_pair(out_image, gt_image, lpips_meter)}
            row["psnr_capped"] = row["psnr_db"] >= PSNR_CAP_DB
        except Exception as exc:
            try:
                wrapped = type(exc)(f"pair {pair_id!r}: {exc}")
            except TypeError:
                raise
            raise wrapped from exc
        rows.append(row)
        if progress is not None:
            progress(pair_id)
    return MetricReport(
        per_image=tuple(rows),
        aggregate=_aggregate(rows),
        lpips_calibrated=getattr(lpips_meter, "calibrated", True),
    )
