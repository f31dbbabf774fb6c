"""Learned perceptual image patch similarity on the residual backbone.

The distance between two images is computed from backbone features at the
four residual stages: each feature map is normalized to unit length along
the channel axis, the squared differences are weighted by a learned
per-channel vector, averaged spatially, and summed over stages.

The per-channel weight vectors are an external calibration artifact loaded
from an ``.npz`` file holding one nonnegative 1-D float array per stage
(keys ``stage1``..``stage4`` with 256/512/1024/2048 entries for the
resnet-50 backbone).  Without such a file an explicitly requested
uncalibrated fallback uses unit weights; its scores are self-consistent but
not comparable to published numbers, and reports are tagged accordingly.
The environment variable ``PCSGAN_LPIPS_WEIGHTS`` overrides the file path.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import FeatureExtractorSpec
from .data import normalize_array
from .errors import ConfigError, ValidationError
from .networks import FeatureExtractor, build_feature_extractor

LPIPS_WEIGHTS_ENV = "PCSGAN_LPIPS_WEIGHTS"
_STAGES = ("stage1", "stage2", "stage3", "stage4")
_EPS = 1e-10


class LpipsMeter:
    """Perceptual distance meter; build via :func:`load_lpips_meter`."""

    def __init__(self, extractor: FeatureExtractor,
                 stage_weights: dict[str, torch.Tensor], calibrated: bool):
        if extractor.tap != "stage4":
            raise ValidationError("the LPIPS extractor must be tapped at stage4")
        for stage in _STAGES:
            w = stage_weights[stage]
            expected = extractor.stage_channels(stage)
            if w.shape != (expected,):
                raise ValidationError(
                    f"LPIPS weight vector for {stage} must have shape ({expected},), "
                    f"got {tuple(w.shape)}")
            if bool((w < 0).any()):
                raise ValidationError(f"LPIPS weights for {stage} must be nonnegative")
        self.extractor = extractor
        self.stage_weights = stage_weights
        self.calibrated = calibrated

    def distance_batch(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Distances for two [-1, 1] batches of equal shape, one per item."""
        if a.shape != b.shape:
            raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        with torch.no_grad():
            feats_a = self.extractor.forward_all(a)
            feats_b = self.extractor.forward_all(b)
            total = a.new_zeros(a.shape[0])
            for stage in _STAGES:
                na = _unit_normalize(feats_a[stage])
                nb = _unit_normalize(feats_b[stage])
                w = self.stage_weights[stage].to(dtype=a.dtype).view(1, -1, 1, 1)
                total = total + (w * (na - nb) ** 2).sum(dim=1).mean(dim=(1, 2))
        return total

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Distance between two 8-bit (H, W, 3) images."""
        ta = normalize_array(_ensure_rgb(a))
        tb = normalize_array(_ensure_rgb(b))
        return float(self.distance_batch(ta, tb)[0])


def _unit_normalize(feat: torch.Tensor) -> torch.Tensor:
    norm = feat.pow(2).sum(dim=1, keepdim=True).sqrt()
    return feat / (norm + _EPS)


def _ensure_rgb(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValidationError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    return arr


def _unit_weights(extractor: FeatureExtractor) -> dict[str, torch.Tensor]:
    return {s: torch.ones(extractor.stage_channels(s)) for s in _STAGES}


def load_stage_weights(path: str | Path) -> dict[str, torch.Tensor]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"LPIPS weight file not found: {path}")
    try:
        with np.load(path) as npz:
            weights = {s: torch.as_tensor(np.asarray(npz[s], dtype=np.float32))
                       for s in _STAGES}
    except KeyError as exc:
        raise ConfigError(
            f"LPIPS weight file {path} is missing stage array {exc}") from exc
    except Exception as exc:
        raise ConfigError(f"cannot read LPIPS weight file {path}: {exc}") from exc
    return weights


def save_stage_weights(weights: dict[str, np.ndarray | torch.Tensor], path: str | Path) -> None:
    arrays = {s: np.asarray(weights[s], dtype=np.float32) for s in _STAGES}
    np.savez(path, **arrays)


def load_lpips_meter(
    weights_path: Optional[str | Path] = None,
    allow_uncalibrated: bool = False,
    feature_spec: Optional[FeatureExtractorSpec] = None,
) -> LpipsMeter:
    """Build a distance meter from a calibration file or the unit fallback.

    Resolution order for the weight file: explicit argument, then the
    ``PCSGAN_LPIPS_WEIGHTS`` environment variable.  When neither is set the
    uncalibrated fallback must be explicitly allowed, otherwise this is a
    configuration error.
    """
    if weights_path is None:
        env = os.environ.get(LPIPS_WEIGHTS_ENV)
        weights_path = env if env else None
    if feature_spec is None:
        feature_spec = FeatureExtractorSpec(backbone="residual_classifier_random",
                                            layer="stage4")
    else:
        feature_spec = FeatureExtractorSpec(backbone=feature_spec.backbone,
                                            layer="stage4", seed=feature_spec.seed)
    extractor = build_feature_extractor(feature_spec)
    if weights_path is not None:
        return LpipsMeter(extractor, load_stage_weights(weights_path), calibrated=True)
    if not allow_uncalibrated:
        raise ConfigError(
            "no LPIPS calibration weights: pass a weight file, set "
            f"{LPIPS_WEIGHTS_ENV}, or explicitly allow the uncalibrated fallback")
    return LpipsMeter(extractor, _unit_weights(extractor), calibrated=False)
