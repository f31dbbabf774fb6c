"""Generator, PatchGAN discriminator, and the frozen feature backbone.

The generator is the 9-residual-block translation network
(c7s1-64, d128, d256, 9 x R256, u128, u64, c7s1-3) with instance
normalization and a tanh output; the discriminator is a 70x70 PatchGAN.
Instance norm layers carry no affine parameters and convolutions keep their
biases, which fixes the trainable parameter counts at 11,378,179 for the
generator and 2,764,737 for the discriminator.
"""

from __future__ import annotations

import torch
import torch.nn as nn
from torchvision.models import resnet50

from .config import FeatureExtractorSpec
from .errors import ConfigError, ValidationError


class ResidualBlock(nn.Module):
    """Two reflection-padded 3x3 convolutions with a skip connection."""

    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class Generator(nn.Module):
    """Image-to-image translation network; output squashed to [-1, 1].

    Input and output shapes agree whenever height and width are divisible
    by 4 (two stride-2 downsamplings followed by two stride-2 upsamplings).
    """

    def __init__(self, image_channels: int = 3, residual_blocks: int = 9):
        super().__init__()
        if image_channels < 1:
            raise ValidationError(f"image_channels must be >= 1, got {image_channels}")
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(image_channels, 64, kernel_size=7),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, 128, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(128),
            nn.ReLU(inplace=True),
            nn.Conv2d(128, 256, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(256),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(256) for _ in range(residual_blocks)]
        layers += [
            nn.ConvTranspose2d(256, 128, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(128),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(128, 64, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(64),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(64, image_channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


class Discriminator(nn.Module):
    """70x70 PatchGAN producing a raw (unsquashed) patch score map.

    Layer plan: 4x4 convolutions with channels 64-128-256 at stride 2, 512 at
    stride 1, and a single-channel 4x4 stride-1 head; leaky ReLU slope 0.2;
    instance norm everywhere except the first convolution.
    """

    def __init__(self, image_channels: int = 3):
        super().__init__()
        if image_channels < 1:
            raise ValidationError(f"image_channels must be >= 1, got {image_channels}")
        self.model = nn.Sequential(
            nn.Conv2d(image_channels, 64, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 128, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(128),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(128, 256, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(256),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(256, 512, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(512),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(512, 1, kernel_size=4, stride=1, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def build_generator(image_channels: int = 3) -> Generator:
    return Generator(image_channels=image_channels)


def build_discriminator(image_channels: int = 3) -> Discriminator:
    return Discriminator(image_channels=image_channels)


def count_parameters(net: nn.Module) -> int:
    """Number of trainable parameter elements."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def init_weights(net: nn.Module, mean: float = 0.0, std: float = 0.02, seed: int = 0) -> None:
    """Draw every convolution weight i.i.d. Gaussian(mean, std); zero the biases.

    The draw comes from a dedicated generator seeded with ``seed``, so two
    calls with equal arguments produce bitwise-identical parameters.
    """
    if std <= 0:
        raise ValidationError(f"init std must be > 0, got {std}")
    rng = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                module.weight.normal_(mean, std, generator=rng)
                if module.bias is not None:
                    module.bias.zero_()


def receptive_field(net: nn.Module) -> int:
    """Receptive field (in input pixels) of one output unit of a conv stack.

    Walks the Conv2d layers in module order and applies the recurrence
    rf <- (rf - 1) * stride + kernel from the head back to the input.
    """
    convs = [m for m in net.modules() if isinstance(m, nn.Conv2d)]
    if not convs:
        raise ValidationError("network has no Conv2d layers")
    rf = 1
    for conv in reversed(convs):
        rf = (rf - 1) * conv.stride[0] + conv.kernel_size[0]
    return rf


def patch_map_size(net: nn.Module, height: int, width: int) -> tuple[int, int]:
    """Spatial size of the discriminator score map for a given input size."""
    h, w = height, width
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            k, s, p = m.kernel_size[0], m.stride[0], m.padding[0]
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
    return h, w


# ImageNet channel statistics used by the torchvision classifiers.
_BACKBONE_MEAN = (0.485, 0.456, 0.406)
_BACKBONE_STD = (0.229, 0.224, 0.225)

# Overall downsampling factor at each tap; used as the minimum input size.
_STAGE_MIN_INPUT = {"stage1": 4, "stage2": 8, "stage3": 16, "stage4": 32}
_STAGE_CHANNELS = {"stage1": 256, "stage2": 512, "stage3": 1024, "stage4": 2048}


class FeatureExtractor(nn.Module):
    """Frozen residual classification backbone tapped at a named stage.

    Inputs are [-1, 1] images; they are remapped to the backbone's
    training-time normalization before feature extraction.  Parameters never
    receive gradients and the module stays in eval mode, so equal inputs
    always yield equal features.
    """

    def __init__(self, spec: FeatureExtractorSpec):
        super().__init__()
        self.spec = spec
        backbone = _make_backbone(spec)
        self.stem = nn.Sequential(backbone.conv1, backbone.bn1, backbone.relu, backbone.maxpool)
        self.stages = nn.ModuleDict({
            "stage1": backbone.layer1,
            "stage2": backbone.layer2,
            "stage3": backbone.layer3,
            "stage4": backbone.layer4,
        })
        self.tap = spec.layer
        self.register_buffer("input_mean", torch.tensor(_BACKBONE_MEAN).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(_BACKBONE_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True) -> "FeatureExtractor":
        # Permanently frozen: ignore requests to enter train mode.
        return super().train(False)

    @property
    def min_input_size(self) -> int:
        return _STAGE_MIN_INPUT[self.tap]

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"expected a (B, 3, H, W) batch, got shape {tuple(x.shape)}")
        if x.shape[2] < self.min_input_size or x.shape[3] < self.min_input_size:
            raise ValidationError(
                f"input {tuple(x.shape[2:])} is smaller than the backbone minimum "
                f"{self.min_input_size} for tap {self.tap!r}")

    def _remap(self, x: torch.Tensor) -> torch.Tensor:
        mean = self.input_mean.to(dtype=x.dtype)
        std = self.input_std.to(dtype=x.dtype)
        return ((x + 1.0) * 0.5 - mean) / std

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        h = self.stem(self._remap(x))
        for name in ("stage1", "stage2", "stage3", "stage4"):
            h = self.stages[name](h)
            if name == self.tap:
                return h
        raise AssertionError(f"tap {self.tap!r} not reached")

    def forward_all(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Feature maps of every stage up to and including the configured tap."""
        self._check_input(x)
        out: dict[str, torch.Tensor] = {}
        h = self.stem(self._remap(x))
        for name in ("stage1", "stage2", "stage3", "stage4"):
            h = self.stages[name](h)
            out[name] = h
            if name == self.tap:
                break
        return out

    def stage_channels(self, name: str) -> int:
        return _STAGE_CHANNELS[name]


def _make_backbone(spec: FeatureExtractorSpec):
    if spec.backbone == "residual_classifier_pretrained":
        try:
            from torchvision.models import ResNet50_Weights
            return resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ConfigError(
                "pretrained backbone weights are unavailable (download failed?); "
                "set feature.backbone to 'residual_classifier_random' for a "
                "seeded offline backbone") from exc
    # Random weights drawn under a forked, seeded RNG so construction leaves
    # the global stream untouched and is reproducible.
    with torch.random.fork_rng():
        torch.manual_seed(spec.seed)
        return resnet50(weights=None)


def build_feature_extractor(spec: FeatureExtractorSpec) -> FeatureExtractor:
    return FeatureExtractor(spec)


def extract_features(fe: FeatureExtractor, batch: torch.Tensor) -> torch.Tensor:
    """Deterministic features of a [-1, 1] image batch at the configured tap."""
    with torch.no_grad():
        return fe(batch)
