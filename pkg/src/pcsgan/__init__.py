"""Paired thermal/NIR to visible image translation with cyclic, synthesized
and perceptual losses, plus a five-metric evaluation suite and an ablation
runner over named loss presets."""

from .config import (FeatureExtractorSpec, LossWeights, MethodPreset, PRESETS,
                     PRESET_NAMES, TrainConfig, load_config, preset_loss_mask)
from .losses import (ForwardBundle, LossComponents, l1_loss, lsgan_discriminator_loss,
                     lsgan_generator_loss, perceptual_l1_loss, total_objective)
from .networks import (Discriminator, FeatureExtractor, Generator, build_discriminator,
                       build_feature_extractor, build_generator, count_parameters,
                       extract_features, init_weights, receptive_field)

__version__ = "0.1.0"

__all__ = [
    "FeatureExtractorSpec", "LossWeights", "MethodPreset", "PRESETS", "PRESET_NAMES",
    "TrainConfig", "load_config", "preset_loss_mask",
    "ForwardBundle", "LossComponents", "l1_loss", "lsgan_discriminator_loss",
    "lsgan_generator_loss", "perceptual_l1_loss", "total_objective",
    "Discriminator", "FeatureExtractor", "Generator", "build_discriminator",
    "build_feature_extractor", "build_generator", "count_parameters",
    "extract_features", "init_weights", "receptive_field",
    "__version__",
]
