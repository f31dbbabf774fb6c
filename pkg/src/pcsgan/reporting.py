"""Figure-style outputs: labeled image grids and matplotlib report plots.

Grids are assembled directly in pixel space with PIL's built-in bitmap font
so no system fonts are needed; report plots (loss curves, metric bars) are
rendered with the Agg backend and written next to the delimited reports.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ValidationError
from .fileio import atomic_save, atomic_write_text

GRID_PAD = 4
LABEL_STRIP = 16  # height of the label band, fits the built-in bitmap font


def render_image_grid(
    rows: Sequence[Sequence[np.ndarray]],
    labels: Sequence[str],
    out: str | Path,
    pad: int = GRID_PAD,
) -> None:
    """Write one PNG with a labeled column per method.

    Every row must list the same number of (H, W, 3) uint8 images of equal
    size; column c of every row is captioned ``labels[c]``.  The canvas is
    ``ncols * (w + pad)`` wide and ``LABEL_STRIP + nrows * (h + pad)`` tall.
    """
    if not rows or not rows[0]:
        raise ValidationError("grid needs at least one row with one image")
    ncols = len(rows[0])
    if any(len(r) != ncols for r in rows):
        raise ValidationError("all grid rows must have the same number of images")
    if len(labels) != ncols:
        raise ValidationError(
            f"got {len(labels)} labels for {ncols} columns")
    first = np.asarray(rows[0][0])
    h, w = first.shape[:2]
    for r in rows:
        for img in r:
            arr = np.asarray(img)
            if arr.shape[:2] != (h, w):
                raise ValidationError(
                    f"all grid images must share one size; {arr.shape[:2]} != {(h, w)}")

    width = ncols * (w + pad)
    height = LABEL_STRIP + len(rows) * (h + pad)
    canvas = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for c, label in enumerate(labels):
        x0 = c * (w + pad)
        text_w = draw.textlength(label, font=font)
        draw.text((x0 + max((w - text_w) // 2, 0), 2), label, fill=(0, 0, 0), font=font)
    for r, row in enumerate(rows):
        y0 = LABEL_STRIP + r * (h + pad)
        for c, img in enumerate(row):
            arr = np.asarray(img, dtype=np.uint8)
            if arr.ndim == 2:
                arr = np.stack([arr] * 3, axis=-1)
            canvas.paste(Image.fromarray(arr), (c * (w + pad), y0))
    atomic_save(out, lambda tmp: canvas.save(tmp, format="PNG"))


def save_loss_curves(loss_history: Sequence[dict], out: str | Path) -> None:
    """Plot per-epoch mean loss components against the epoch number."""
    if not loss_history:
        raise ValidationError("empty loss history")
    epochs = [row["epoch"] for row in loss_history]
    series = [k for k in loss_history[0] if k not in ("epoch", "lr")]
    fig, ax = plt.subplots(figsize=(8, 5))
    for name in series:
        values = [row[name] for row in loss_history]
        if any(v != 0.0 for v in values):
            ax.plot(epochs, values, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    atomic_save(out, lambda tmp: fig.savefig(tmp, dpi=120, format="png"))
    plt.close(fig)


def save_metric_bars(
    rows: Sequence[tuple[str, dict]],
    out: str | Path,
    metrics: Sequence[str] = ("ssim", "mse", "psnr_db", "lpips", "ms_ssim"),
) -> None:
    """Grouped bar chart: one panel per metric, one bar per labeled row."""
    if not rows:
        raise ValidationError("no rows to plot")
    labels = [label for label, _ in rows]
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.6))
    if len(metrics) == 1:
        axes = [axes]
    for ax, metric in zip(axes, metrics):
        values = [agg[metric] for _, agg in rows]
        ax.bar(range(len(values)), values, color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(metric)
    fig.tight_layout()
    atomic_save(out, lambda tmp: fig.savefig(tmp, dpi=120, format="png"))
    plt.close(fig)


def save_metric_histograms(report, out: str | Path) -> None:
    """Per-image metric distributions for one evaluation report."""
    metrics = ("ssim", "ms_ssim", "psnr_db", "mse", "lpips")
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 3.0))
    for ax, metric in zip(axes, metrics):
        values = [row[metric] for row in report.per_image]
        ax.hist(values, bins=min(20, max(3, len(values) // 2)), color="#4878a8")
        ax.axvline(report.aggregate[metric], color="#b3442e", linestyle="--")
        ax.set_title(metric)
    fig.tight_layout()
    atomic_save(out, lambda tmp: fig.savefig(tmp, dpi=120, format="png"))
    plt.close(fig)


def write_ablation_csv(rows: Sequence[tuple[str, str, dict]], out: str | Path) -> None:
    """Combined ablation table: one row per preset, paper-style column order."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["preset", "loss_functions", "ssim", "mse", "psnr_db",
                     "lpips", "ms_ssim"])
    for preset, label, agg in rows:
        writer.writerow([preset, label,
                         *(repr(agg[c]) for c in
                           ("ssim", "mse", "psnr_db", "lpips", "ms_ssim"))])
    atomic_write_text(out, buf.getvalue())


def format_ablation_table(rows: Sequence[tuple[str, str, dict]]) -> str:
    header = f"{'Loss Functions':<22}{'SSIM':>10}{'MSE':>12}{'PSNR':>10}{'LPIPS':>10}{'MSSIM':>10}"
    lines = [header, "-" * len(header)]
    for _, label, agg in rows:
        lines.append(
            f"{label:<22}{agg['ssim']:>10.4f}{agg['mse']:>12.4f}"
            f"{agg['psnr_db']:>10.4f}{agg['lpips']:>10.4f}{agg['ms_ssim']:>10.4f}")
    return "\n".join(lines)
