"""Run configuration, loss-weight presets, and the YAML config loader.

A config file is a YAML tree; dotted key names used throughout the docs
(``train.base_lr``) denote paths into that tree.  All types here are frozen
dataclasses and safe to share across threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError, ValidationError

# The ten weighted objective terms, grouped by the weight that scales them.
# adv_* carry an implicit weight of 1 and only an enable flag.
TERM_NAMES = (
    "adv_t", "adv_v",
    "cyc_t", "cyc_v",
    "syn_t", "syn_v",
    "cyc_per_t", "cyc_per_v",
    "syn_per_t", "syn_per_v",
)

DATASET_LAYOUTS = ("whu_iip", "rgb_nir", "generic_paired")
FEATURE_BACKBONES = ("residual_classifier_pretrained", "residual_classifier_random")
FEATURE_LAYERS = ("stage1", "stage2", "stage3", "stage4")


@dataclass(frozen=True)
class LossWeights:
    """Coefficients and enable flags for the composite training objective.

    A disabled term contributes exactly 0 regardless of its weight; the
    adversarial terms are unweighted and carry only enable flags.
    """

    lambda_t: float = 10.0
    lambda_v: float = 10.0
    mu_t: float = 15.0
    mu_v: float = 15.0
    omega_t: float = 1.0
    omega_v: float = 1.0
    psi_t: float = 1.0
    psi_v: float = 1.0
    adv_t_enabled: bool = True
    adv_v_enabled: bool = True
    cyc_t_enabled: bool = True
    cyc_v_enabled: bool = True
    syn_t_enabled: bool = True
    syn_v_enabled: bool = True
    cyc_per_t_enabled: bool = True
    cyc_per_v_enabled: bool = True
    syn_per_t_enabled: bool = True
    syn_per_v_enabled: bool = True

    def __post_init__(self) -> None:
        for name in ("lambda_t", "lambda_v", "mu_t", "mu_v",
                     "omega_t", "omega_v", "psi_t", "psi_v"):
            value = getattr(self, name)
            if not (value >= 0.0):
                raise ValidationError(f"loss weight {name} must be >= 0, got {value!r}")

    def enabled_terms(self) -> frozenset[str]:
        return frozenset(t for t in TERM_NAMES if getattr(self, f"{t}_enabled"))

    def coefficient(self, term: str) -> float:
        """Effective coefficient of an objective term: weight times enable flag."""
        if term not in TERM_NAMES:
            raise KeyError(f"unknown objective term {term!r}")
        if not getattr(self, f"{term}_enabled"):
            return 0.0
        weight_field = _TERM_WEIGHT_FIELD[term]
        return 1.0 if weight_field is None else getattr(self, weight_field)

    @property
    def uses_cycle(self) -> bool:
        """True when any term needs the cycled images."""
        return bool(self.enabled_terms() & {"cyc_t", "cyc_v", "cyc_per_t", "cyc_per_v"})

    @property
    def uses_features(self) -> bool:
        """True when any perceptual term needs the frozen feature extractor."""
        return bool(self.enabled_terms()
                    & {"cyc_per_t", "cyc_per_v", "syn_per_t", "syn_per_v"})


# Weight field backing each term; adversarial terms have none (weight 1).
_TERM_WEIGHT_FIELD = {
    "adv_t": None, "adv_v": None,
    "cyc_t": "lambda_t", "cyc_v": "lambda_v",
    "syn_t": "mu_t", "syn_v": "mu_v",
    "cyc_per_t": "omega_t", "cyc_per_v": "omega_v",
    "syn_per_t": "psi_t", "syn_per_v": "psi_v",
}


@dataclass(frozen=True)
class MethodPreset:
    """A named loss configuration: a subset of the ten objective terms."""

    name: str
    mask: LossWeights
    label: str  # display label used in ablation tables


def _mask_for(terms: frozenset[str]) -> LossWeights:
    flags = {f"{t}_enabled": (t in terms) for t in TERM_NAMES}
    return LossWeights(**flags)


_ADV = frozenset({"adv_t", "adv_v"})
_CYC = frozenset({"cyc_t", "cyc_v"})
_SYN = frozenset({"syn_t", "syn_v"})
_CYC_PER = frozenset({"cyc_per_t", "cyc_per_v"})
_SYN_PER = frozenset({"syn_per_t", "syn_per_v"})

_PRESET_TERMS = {
    "gan_only": _ADV,
    "pix2pix": _ADV | _SYN,
    "cyclegan": _ADV | _CYC,
    "ps2gan": _ADV | _CYC | _SYN,
    "pcsgan": _ADV | _CYC | _SYN | _CYC_PER | _SYN_PER,
    "abl_AL": _ADV,
    "abl_AL_CL": _ADV | _CYC,
    "abl_AL_CL_CPL": _ADV | _CYC | _CYC_PER,
    "abl_AL_CL_SL": _ADV | _CYC | _SYN,
    "abl_AL_CL_SL_SPL": _ADV | _CYC | _SYN | _SYN_PER,
}

_PRESET_LABELS = {
    "gan_only": "GAN",
    "pix2pix": "Pix2pix",
    "cyclegan": "CycleGAN",
    "ps2gan": "PS2GAN",
    "pcsgan": "AL+CL+CPL+SL+SPL",
    "abl_AL": "AL",
    "abl_AL_CL": "AL+CL",
    "abl_AL_CL_CPL": "AL+CL+CPL",
    "abl_AL_CL_SL": "AL+CL+SL",
    "abl_AL_CL_SL_SPL": "AL+CL+SL+SPL",
}

PRESETS: dict[str, MethodPreset] = {
    name: MethodPreset(name=name, mask=_mask_for(terms), label=_PRESET_LABELS[name])
    for name, terms in _PRESET_TERMS.items()
}

PRESET_NAMES = tuple(PRESETS)


def preset_loss_mask(name: str) -> LossWeights:
    """Return the loss mask of a named preset with default weight magnitudes."""
    try:
        return PRESETS[name].mask
    except KeyError:
        known = ", ".join(PRESET_NAMES)
        raise KeyError(f"unknown preset {name!r}; known presets: {known}") from None


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Which frozen backbone supplies perceptual features, and at which tap."""

    backbone: str = "residual_classifier_pretrained"
    layer: str = "stage3"
    seed: int = 0  # weight seed for the random backbone; ignored when pretrained

    def __post_init__(self) -> None:
        if self.backbone not in FEATURE_BACKBONES:
            raise ValidationError(
                f"feature.backbone must be one of {FEATURE_BACKBONES}, got {self.backbone!r}")
        if self.layer not in FEATURE_LAYERS:
            raise ValidationError(
                f"feature.layer must be one of {FEATURE_LAYERS}, got {self.layer!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs, reproducible from one file."""

    dataset_root: Path
    dataset_layout: str = "generic_paired"
    image_size: int = 256
    epochs_total: int = 200
    epochs_constant_lr: int = 100
    base_lr: float = 2e-4
    batch_size: int = 1
    adam_beta1: float = 0.9
    init_mean: float = 0.0
    init_std: float = 0.02
    weights: LossWeights = field(default_factory=LossWeights)
    preset: Optional[str] = None
    seed: int = 0
    feature_extractor: FeatureExtractorSpec = field(default_factory=FeatureExtractorSpec)
    checkpoint_dir: Path = Path("checkpoints")
    checkpoint_every: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "dataset_root", Path(self.dataset_root))
        object.__setattr__(self, "checkpoint_dir", Path(self.checkpoint_dir))
        if self.dataset_layout not in DATASET_LAYOUTS:
            raise ValidationError(
                f"dataset.layout must be one of {DATASET_LAYOUTS}, got {self.dataset_layout!r}")
        if self.image_size <= 0:
            raise ValidationError(f"train.image_size must be > 0, got {self.image_size}")
        if self.image_size % 4 != 0:
            # The generator downsamples twice and upsamples twice; other sizes
            # cannot round-trip to the input shape.
            raise ValidationError(
                f"train.image_size must be divisible by 4, got {self.image_size}")
        if self.batch_size < 1:
            raise ValidationError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_total < 1:
            raise ValidationError(f"train.epochs_total must be >= 1, got {self.epochs_total}")
        if self.epochs_constant_lr > self.epochs_total:
            raise ValidationError(
                "train.epochs_constant_lr must be <= train.epochs_total "
                f"({self.epochs_constant_lr} > {self.epochs_total})")
        if self.epochs_constant_lr < 0:
            raise ValidationError("train.epochs_constant_lr must be >= 0")
        if self.init_std <= 0:
            raise ValidationError(f"init.std must be > 0, got {self.init_std}")
        if self.checkpoint_every < 1:
            raise ValidationError(f"checkpoint.every must be >= 1, got {self.checkpoint_every}")
        if self.preset is not None:
            if self.preset not in PRESETS:
                known = ", ".join(PRESET_NAMES)
                raise ValidationError(f"unknown preset {self.preset!r}; known presets: {known}")
            mask = PRESETS[self.preset].mask
            if self.weights == LossWeights():
                # untouched default: the preset supplies the weights
                object.__setattr__(self, "weights", mask)
            elif self.weights != mask:
                raise ValidationError(
                    f"preset {self.preset!r} fixes the loss weights; "
                    "got a conflicting weights value")

    def to_dict(self) -> dict[str, Any]:
        """JSON-serializable snapshot, stored inside checkpoints."""
        d = dataclasses.asdict(self)
        d["dataset_root"] = str(self.dataset_root)
        d["checkpoint_dir"] = str(self.checkpoint_dir)
        return d

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        d["dataset_root"] = Path(d["dataset_root"])
        d["checkpoint_dir"] = Path(d["checkpoint_dir"])
        d["weights"] = LossWeights(**d["weights"])
        d["feature_extractor"] = FeatureExtractorSpec(**d["feature_extractor"])
        return TrainConfig(**d)


# Recognized config keys, by section.  Anything else is rejected so that a
# typo cannot silently fall back to a default.
_KNOWN_KEYS = {
    "dataset": {"root", "layout"},
    "train": {"image_size", "epochs_total", "epochs_constant_lr", "base_lr",
              "batch_size", "adam_beta1", "seed"},
    "init": {"mean", "std"},
    "loss": {"preset", "lambda_t", "lambda_v", "mu_t", "mu_v",
             "omega_t", "omega_v", "psi_t", "psi_v"},
    "feature": {"backbone", "layer", "seed"},
    "checkpoint": {"dir", "every"},
}

_WEIGHT_KEYS = ("lambda_t", "lambda_v", "mu_t", "mu_v",
                "omega_t", "omega_v", "psi_t", "psi_v")


def _check_keys(tree: dict[str, Any], path: Path) -> None:
    for section, value in tree.items():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown config section {section!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        for key in value:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown config key {section}.{key}")


def load_config(path: str | Path) -> TrainConfig:
    """Parse a YAML config file into a validated :class:`TrainConfig`.

    Unspecified keys take the defaults documented on :class:`TrainConfig`.
    Setting ``loss.preset`` together with any explicit ``loss.*`` weight is
    rejected: a preset fully determines the weights.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}: config syntax error{where}: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level of the config must be a mapping")
    _check_keys(tree, path)

    dataset = tree.get("dataset", {})
    train = tree.get("train", {})
    init = tree.get("init", {})
    loss = tree.get("loss", {})
    feature = tree.get("feature", {})
    checkpoint = tree.get("checkpoint", {})

    if "root" not in dataset:
        raise ConfigError(f"{path}: required key dataset.root is missing")

    preset = loss.get("preset")
    explicit_weights = [k for k in _WEIGHT_KEYS if k in loss]
    if preset is not None and explicit_weights:
        raise ValidationError(
            f"loss.preset={preset!r} fixes all weights; explicit "
            f"{', '.join('loss.' + k for k in explicit_weights)} not allowed")
    if preset is not None:
        weights = preset_loss_mask(preset)
    else:
        weights = LossWeights(**{k: float(loss[k]) for k in explicit_weights})

    fe_kwargs: dict[str, Any] = {}
    if "backbone" in feature:
        fe_kwargs["backbone"] = str(feature["backbone"])
    if "layer" in feature:
        fe_kwargs["layer"] = str(feature["layer"])
    if "seed" in feature:
        fe_kwargs["seed"] = int(feature["seed"])

    kwargs: dict[str, Any] = {
        "dataset_root": Path(dataset["root"]),
        "weights": weights,
        "preset": preset,
        "feature_extractor": FeatureExtractorSpec(**fe_kwargs),
    }
    if "layout" in dataset:
        kwargs["dataset_layout"] = str(dataset["layout"])
    for key, attr, conv in (
        ("image_size", "image_size", int),
        ("epochs_total", "epochs_total", int),
        ("epochs_constant_lr", "epochs_constant_lr", int),
        ("base_lr", "base_lr", float),
        ("batch_size", "batch_size", int),
        ("adam_beta1", "adam_beta1", float),
        ("seed", "seed", int),
    ):
        if key in train:
            kwargs[attr] = conv(train[key])
    if "mean" in init:
        kwargs["init_mean"] = float(init["mean"])
    if "std" in init:
        kwargs["init_std"] = float(init["std"])
    if "dir" in checkpoint:
        kwargs["checkpoint_dir"] = Path(checkpoint["dir"])
    if "every" in checkpoint:
        kwargs["checkpoint_every"] = int(checkpoint["every"])

    return TrainConfig(**kwargs)


def apply_preset(cfg: TrainConfig, preset: str) -> TrainConfig:
    """Return a copy of ``cfg`` with the named preset's mask installed."""
    return replace(cfg, preset=preset, weights=preset_loss_mask(preset))
