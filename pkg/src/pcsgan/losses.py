"""Loss terms and the weighted composite objective.

All functions are pure and differentiable.  Pixel losses are mean absolute
errors, adversarial losses are least-squares (targets 1 for real, 0 for
fake), and perceptual losses are mean absolute errors between frozen
backbone features.  The generator is trained to pull its fakes' scores
toward the real label, mean((D(fake) - 1)^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Optional, Union

import torch

from .config import LossWeights
from .errors import NumericError, ValidationError

Scalar = Union[float, torch.Tensor]

# Generator-side component fields in objective order; adv_d_* are optimized
# separately against the discriminators.
GENERATOR_TERMS = (
    ("adv_g_t", "adv_t"),
    ("adv_g_v", "adv_v"),
    ("cyc_t", "cyc_t"),
    ("cyc_v", "cyc_v"),
    ("syn_t", "syn_t"),
    ("syn_v", "syn_v"),
    ("cyc_per_t", "cyc_per_t"),
    ("cyc_per_v", "cyc_per_v"),
    ("syn_per_t", "syn_per_t"),
    ("syn_per_v", "syn_per_v"),
)


@dataclass(frozen=True)
class LossComponents:
    """Every term of one training iteration, before any parameter update.

    Fields hold python floats in logs and 0-dim tensors while differentiable.
    Terms disabled by the active mask are reported as 0.0 and never computed.
    """

    adv_g_t: Scalar = 0.0
    adv_g_v: Scalar = 0.0
    adv_d_t: Scalar = 0.0
    adv_d_v: Scalar = 0.0
    cyc_t: Scalar = 0.0
    cyc_v: Scalar = 0.0
    syn_t: Scalar = 0.0
    syn_v: Scalar = 0.0
    cyc_per_t: Scalar = 0.0
    cyc_per_v: Scalar = 0.0
    syn_per_t: Scalar = 0.0
    syn_per_v: Scalar = 0.0

    def as_floats(self) -> "LossComponents":
        def to_float(v: Scalar) -> float:
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return LossComponents(**{
            f.name: to_float(getattr(self, f.name)) for f in fields(self)})

    @staticmethod
    def field_names() -> tuple[str, ...]:
        return tuple(f.name for f in fields(LossComponents))


@dataclass(frozen=True)
class ForwardBundle:
    """One iteration's images: reals, synthesized, and (optionally) cycled.

    ``cyc_t`` is the round trip of ``real_t`` through both generators
    (and symmetrically for ``cyc_v``); the cycled images are ``None`` when no
    enabled term needs them.
    """

    real_t: torch.Tensor
    real_v: torch.Tensor
    syn_t: torch.Tensor
    syn_v: torch.Tensor
    cyc_t: Optional[torch.Tensor] = None
    cyc_v: Optional[torch.Tensor] = None


def make_forward_bundle(
    g_t: Callable[[torch.Tensor], torch.Tensor],
    g_v: Callable[[torch.Tensor], torch.Tensor],
    real_t: torch.Tensor,
    real_v: torch.Tensor,
    with_cycle: bool = True,
) -> ForwardBundle:
    """Run both generators: syn_v = g_v(real_t), syn_t = g_t(real_v), and the
    round trips cyc_t = g_t(syn_v), cyc_v = g_v(syn_t) when requested."""
    syn_v = g_v(real_t)
    syn_t = g_t(real_v)
    cyc_t = g_t(syn_v) if with_cycle else None
    cyc_v = g_v(syn_t) if with_cycle else None
    return ForwardBundle(real_t=real_t, real_v=real_v, syn_t=syn_t, syn_v=syn_v,
                         cyc_t=cyc_t, cyc_v=cyc_v)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def lsgan_discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """mean((d_real - 1)^2) + mean(d_fake^2); callers detach the fake images."""
    _check_same_shape(d_real, d_fake, "lsgan_discriminator_loss")
    return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """mean((d_fake - 1)^2): push fake scores toward the real label."""
    return ((d_fake - 1.0) ** 2).mean()


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute elementwise difference."""
    _check_same_shape(a, b, "l1_loss")
    return (a - b).abs().mean()


def perceptual_l1_loss(
    fe: Callable[[torch.Tensor], torch.Tensor],
    a: torch.Tensor,
    b: torch.Tensor,
) -> torch.Tensor:
    """Mean absolute difference between frozen backbone features of a and b."""
    _check_same_shape(a, b, "perceptual_l1_loss")
    return (fe(a) - fe(b)).abs().mean()


def require_finite(value: Scalar, term: str) -> None:
    """Raise :class:`NumericError` naming ``term`` unless value is finite."""
    v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(v):
        raise NumericError(f"loss term {term!r} is not finite: {v!r}")


def total_objective(
    components: LossComponents,
    weights: LossWeights,
) -> tuple[Scalar, tuple[Scalar, Scalar]]:
    """Weighted generator objective plus the pair of discriminator losses.

    generator_total sums the ten generator-side terms, each multiplied by its
    weight and enable flag; the discriminator losses are returned separately
    because they drive a disjoint parameter set.  Disabled terms contribute
    exactly 0 regardless of their weight.  A non-finite enabled component
    raises :class:`NumericError` naming the term.
    """
    generator_total: Scalar = 0.0
    for field_name, term in GENERATOR_TERMS:
        coeff = weights.coefficient(term)
        if coeff == 0.0:
            continue
        value = getattr(components, field_name)
        require_finite(value, field_name)
        generator_total = generator_total + coeff * value

    def _disc(field_name: str, enabled: bool) -> Scalar:
        if not enabled:
            return 0.0
        value = getattr(components, field_name)
        require_finite(value, field_name)
        return value

    disc_totals = (_disc("adv_d_t", weights.adv_t_enabled),
                   _disc("adv_d_v", weights.adv_v_enabled))
    return generator_total, disc_totals


def generator_components(
    bundle: ForwardBundle,
    d_t: Callable[[torch.Tensor], torch.Tensor],
    d_v: Callable[[torch.Tensor], torch.Tensor],
    fe: Optional[Callable[[torch.Tensor], torch.Tensor]],
    weights: LossWeights,
) -> LossComponents:
    """Evaluate every enabled generator-side term on a forward bundle.

    Terms whose enable flag is off are reported as 0.0 and not computed, so
    e.g. an adversarial-only configuration never touches the feature
    extractor.  Discriminator fields of the result are left at 0.0.
    """
    enabled = weights.enabled_terms()
    if weights.uses_cycle and (bundle.cyc_t is None or bundle.cyc_v is None):
        raise ValidationError("cycle terms enabled but the bundle has no cycled images")
    values: dict[str, Scalar] = {}
    if "adv_t" in enabled:
        values["adv_g_t"] = lsgan_generator_loss(d_t(bundle.syn_t))
    if "adv_v" in enabled:
        values["adv_g_v"] = lsgan_generator_loss(d_v(bundle.syn_v))
    if "cyc_t" in enabled:
        values["cyc_t"] = l1_loss(bundle.real_t, bundle.cyc_t)
    if "cyc_v" in enabled:
        values["cyc_v"] = l1_loss(bundle.real_v, bundle.cyc_v)
    if "syn_t" in enabled:
        values["syn_t"] = l1_loss(bundle.real_t, bundle.syn_t)
    if "syn_v" in enabled:
        values["syn_v"] = l1_loss(bundle.real_v, bundle.syn_v)
    if weights.uses_features and fe is None:
        raise ValidationError("perceptual terms enabled but no feature extractor given")
    if "cyc_per_t" in enabled:
        values["cyc_per_t"] = perceptual_l1_loss(fe, bundle.cyc_t, bundle.real_t)
    if "cyc_per_v" in enabled:
        values["cyc_per_v"] = perceptual_l1_loss(fe, bundle.cyc_v, bundle.real_v)
    if "syn_per_t" in enabled:
        values["syn_per_t"] = perceptual_l1_loss(fe, bundle.syn_t, bundle.real_t)
    if "syn_per_v" in enabled:
        values["syn_per_v"] = perceptual_l1_loss(fe, bundle.syn_v, bundle.real_v)
    return LossComponents(**values)
