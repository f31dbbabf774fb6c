"""Command-line entry points: train, evaluate, transform, ablate.

Every command exits 0 only when no error path was taken; failures print a
message to stderr and return a nonzero code.  Report-producing commands
write figures (PNG) alongside their delimited CSV/JSON outputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from . import data, lpips, metrics, reporting, training
from .config import PRESETS, TrainConfig, apply_preset, load_config
from .errors import PcsganError, ValidationError
from .networks import build_generator

IMAGE_SUFFIXES = data.IMAGE_SUFFIXES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsgan",
        description="Paired thermal/NIR to visible image translation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training schedule from a config file")
    p_train.add_argument("--config", required=True, help="YAML config file")
    p_train.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_eval.add_argument("--data", required=True, help="dataset root")
    p_eval.add_argument("--out", required=True, help="output directory for the report")
    _add_lpips_args(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_tr = sub.add_parser("transform", help="translate a directory of images")
    p_tr.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_tr.add_argument("--input", required=True, help="directory of input images")
    p_tr.add_argument("--output", required=True, help="directory for translated PNGs")
    p_tr.add_argument("--direction", required=True, choices=("t2v", "v2t"),
                      help="t2v: source to visible; v2t: visible to source")
    p_tr.set_defaults(func=cmd_transform)

    p_abl = sub.add_parser("ablate", help="train and evaluate a list of loss presets")
    p_abl.add_argument("--config", required=True, help="YAML base config file")
    p_abl.add_argument("--presets", required=True,
                       help="comma-separated preset names, e.g. abl_AL,abl_AL_CL")
    _add_lpips_args(p_abl)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def _add_lpips_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lpips-weights", default=None,
                        help="LPIPS calibration file (.npz); defaults to "
                             f"${lpips.LPIPS_WEIGHTS_ENV} when set")
    parser.add_argument("--lpips-uncalibrated", action="store_true",
                        help="allow unit-weight LPIPS when no calibration file is given")


def _lpips_meter(args, cfg: Optional[TrainConfig]) -> lpips.LpipsMeter:
    spec = cfg.feature_extractor if cfg is not None else None
    return lpips.load_lpips_meter(
        weights_path=args.lpips_weights,
        allow_uncalibrated=args.lpips_uncalibrated,
        feature_spec=spec,
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    bundle = training.train(cfg, resume_from=args.resume)
    ckpt_dir = Path(cfg.checkpoint_dir)
    if bundle.loss_history:
        reporting.save_loss_curves(bundle.loss_history, ckpt_dir / "loss_curves.png")
    print(f"final checkpoint: {ckpt_dir / 'final'}")
    return 0


def _generator_from_bundle(bundle: training.CheckpointBundle, direction: str) -> torch.nn.Module:
    """The generator acting in the requested direction: t2v uses G_V, v2t G_T."""
    net = build_generator()
    key = "g_v" if direction == "t2v" else "g_t"
    net.load_state_dict(bundle.net_states[key])
    net.eval()
    return net


def cmd_evaluate(args) -> int:
    bundle = training.load_checkpoint(args.checkpoint)
    cfg = bundle.config
    meter = _lpips_meter(args, cfg)
    generator = _generator_from_bundle(bundle, "t2v")
    manifest = data.scan_paired_dataset(args.data, cfg.dataset_layout)
    report = metrics.evaluate_dataset(generator, manifest, meter,
                                      image_size=cfg.image_size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(out_dir / "report.json")
    report.write_csv(out_dir / "report.csv")
    reporting.save_metric_histograms(report, out_dir / "report_metrics.png")
    print(report.table_row())
    if not report.lpips_calibrated:
        print("note: LPIPS used the uncalibrated unit-weight fallback; "
              "values are not comparable across backbones", file=sys.stderr)
    return 0


def _transform_one(generator: torch.nn.Module, path: Path, out_dir: Path,
                   image_size: int) -> None:
    batch = data.load_image(path, image_size)
    with torch.no_grad():
        out = generator(batch)
    image = data.denormalize(out)[0]
    Image.fromarray(image).save(out_dir / (path.stem + ".png"), format="PNG")


def cmd_transform(args) -> int:
    bundle = training.load_checkpoint(args.checkpoint)
    generator = _generator_from_bundle(bundle, args.direction)
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        print(f"error: input directory not found: {in_dir}", file=sys.stderr)
        return 1
    paths = [p for p in sorted(in_dir.iterdir())
             if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()]
    if not paths:
        print(f"error: no input images found under {in_dir}", file=sys.stderr)
        return 1
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in paths:
        try:
            _transform_one(generator, path, out_dir, bundle.config.image_size)
        except (PcsganError, OSError) as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    print(f"transformed {len(paths) - failures}/{len(paths)} images into {out_dir}")
    return 1 if failures else 0


@dataclass(frozen=True)
class AblationPlan:
    """An ordered preset list trained under one shared base config and seed;
    each preset writes to its own subdirectory of ``out_dir``."""

    presets: tuple[str, ...]
    base: TrainConfig
    out_dir: Path

    def __post_init__(self) -> None:
        if not self.presets:
            raise ValidationError("ablation plan needs at least one preset")
        unknown = [p for p in self.presets if p not in PRESETS]
        if unknown:
            raise ValidationError(f"unknown preset(s): {', '.join(unknown)}")
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    def config_for(self, preset: str) -> TrainConfig:
        return replace(apply_preset(self.base, preset),
                       checkpoint_dir=self.out_dir / preset)


def run_ablation(plan: AblationPlan, lpips_meter, manifest=None):
    """Train and evaluate every preset of the plan sequentially.

    Runs share the seed and differ only in the loss mask.  Returns
    ``(rows, preset_outputs)`` where rows are (preset, label, aggregate)
    in request order and preset_outputs hold sample translations for the
    qualitative grid.  A preset failure aborts, naming the preset.
    """
    if manifest is None:
        manifest = data.scan_paired_dataset(plan.base.dataset_root,
                                            plan.base.dataset_layout)
    rows: list[tuple[str, str, dict]] = []
    preset_outputs: list[list[np.ndarray]] = []
    for name in plan.presets:
        cfg = plan.config_for(name)
        try:
            bundle = training.train(cfg, manifest=manifest)
            generator = _generator_from_bundle(bundle, "t2v")
            report = metrics.evaluate_dataset(generator, manifest, lpips_meter,
                                              image_size=cfg.image_size)
        except PcsganError as exc:
            raise type(exc)(f"preset {name!r} failed: {exc}") from exc
        rows.append((name, PRESETS[name].label, report.aggregate))
        preset_outputs.append(_grid_column(generator, manifest, cfg.image_size))
    return rows, preset_outputs


def cmd_ablate(args) -> int:
    base_cfg = load_config(args.config)
    preset_names = tuple(p.strip() for p in args.presets.split(",") if p.strip())
    plan = AblationPlan(presets=preset_names, base=base_cfg,
                        out_dir=Path(base_cfg.checkpoint_dir))
    manifest = data.scan_paired_dataset(base_cfg.dataset_root, base_cfg.dataset_layout)
    meter = _lpips_meter(args, base_cfg)
    rows, preset_outputs = run_ablation(plan, meter, manifest=manifest)
    reporting.write_ablation_csv(rows, plan.out_dir / "ablation.csv")
    reporting.save_metric_bars([(label, agg) for _, label, agg in rows],
                               plan.out_dir / "ablation_metrics.png")
    _write_ablation_grid(manifest, preset_outputs, list(plan.presets),
                         base_cfg.image_size, plan.out_dir / "ablation_grid.png")
    print(reporting.format_ablation_table(rows))
    print(f"ablation table: {plan.out_dir / 'ablation.csv'}")
    return 0


def _grid_column(generator: torch.nn.Module, manifest, image_size: int,
                 max_rows: int = 2) -> list[np.ndarray]:
    outputs = []
    for sample in manifest.test[:max_rows]:
        src, _ = data.load_pair(sample, image_size)
        with torch.no_grad():
            out = generator(src)
        outputs.append(data.denormalize(out)[0])
    return outputs


def _write_ablation_grid(manifest, preset_columns: list[list[np.ndarray]],
                         preset_names: list[str], image_size: int,
                         out: Path, max_rows: int = 2) -> None:
    """Qualitative grid: input, one column per preset, ground truth last."""
    samples = manifest.test[:max_rows]
    if not samples or not preset_columns:
        return
    n = len(preset_columns[0])
    rows = []
    for i in range(n):
        sample = samples[i]
        src, vis = data.load_pair(sample, image_size)
        row = [data.denormalize(src)[0]]
        row += [column[i] for column in preset_columns]
        row.append(data.denormalize(vis)[0])
        rows.append(row)
    labels = ["Input", *(PRESETS[p].label for p in preset_names), "Ground truth"]
    reporting.render_image_grid(rows, labels, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PcsganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
