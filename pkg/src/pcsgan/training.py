"""Alternating generator/discriminator optimization with checkpointing.

Each iteration updates, in order: both generators on the weighted composite
objective (discriminators frozen), then the visible-domain discriminator,
then the source-domain discriminator, each on its least-squares loss with
the current iteration's fakes detached.  The learning rate is constant for
the first ``epochs_constant_lr`` epochs and decays linearly to zero at
``epochs_total``.  Checkpoints are directories written atomically
(temp-then-rename) and round-trip parameters bitwise.
"""

from __future__ import annotations

import csv
import json
import random
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .config import LossWeights, TrainConfig
from .data import DatasetManifest, load_pair, scan_paired_dataset
from .errors import CheckpointError, ValidationError
from .losses import (LossComponents, generator_components, lsgan_discriminator_loss,
                     make_forward_bundle, require_finite, total_objective)
from .networks import (FeatureExtractor, build_discriminator, build_feature_extractor,
                       build_generator, init_weights)

CHECKPOINT_FORMAT_VERSION = 1
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_COLUMNS = ("epoch", "iteration",
               "adv_G_T", "adv_G_V", "adv_D_T", "adv_D_V",
               "cyc_T", "cyc_V", "syn_T", "syn_V",
               "cyc_per_T", "cyc_per_V", "syn_per_T", "syn_per_V", "lr")

# LossComponents field backing each logged loss column.
_LOG_FIELDS = ("adv_g_t", "adv_g_v", "adv_d_t", "adv_d_v",
               "cyc_t", "cyc_v", "syn_t", "syn_v",
               "cyc_per_t", "cyc_per_v", "syn_per_t", "syn_per_v")

_NETWORKS = ("g_v", "g_t", "d_v", "d_t")


@dataclass
class ModelBundle:
    """The four trainable networks plus the frozen feature extractor."""

    g_v: torch.nn.Module
    g_t: torch.nn.Module
    d_v: torch.nn.Module
    d_t: torch.nn.Module
    fe: Optional[FeatureExtractor] = None

    def named(self) -> dict[str, torch.nn.Module]:
        return {"g_v": self.g_v, "g_t": self.g_t, "d_v": self.d_v, "d_t": self.d_t}


@dataclass
class TrainState:
    models: ModelBundle
    optimizers: dict[str, torch.optim.Adam]
    epoch: int = 0
    iteration: int = 0


@dataclass
class CheckpointBundle:
    """Everything needed to resume or evaluate a run."""

    config: TrainConfig
    epoch: int
    net_states: dict[str, dict]
    optim_states: dict[str, dict]
    loss_history: list[dict] = field(default_factory=list)
    format_version: int = CHECKPOINT_FORMAT_VERSION


def init_train_state(cfg: TrainConfig) -> TrainState:
    """Build and initialize networks and optimizers from a config.

    Weight init seeds derive from ``cfg.seed`` (one offset per network); the
    feature extractor is built only if a perceptual term is enabled and is
    excluded from every optimizer parameter group.
    """
    models = ModelBundle(
        g_v=build_generator(), g_t=build_generator(),
        d_v=build_discriminator(), d_t=build_discriminator(),
        fe=build_feature_extractor(cfg.feature_extractor) if cfg.weights.uses_features else None,
    )
    for offset, name in enumerate(_NETWORKS):
        init_weights(models.named()[name], cfg.init_mean, cfg.init_std, seed=cfg.seed + offset)
    optimizers = {
        name: torch.optim.Adam(net.parameters(), lr=cfg.base_lr,
                               betas=(cfg.adam_beta1, ADAM_BETA2), eps=ADAM_EPS)
        for name, net in models.named().items()
    }
    return TrainState(models=models, optimizers=optimizers)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Constant base_lr through epochs_constant_lr, then linear decay to 0."""
    if not 1 <= epoch <= cfg.epochs_total:
        raise ValidationError(
            f"epoch must be in 1..{cfg.epochs_total}, got {epoch}")
    if epoch <= cfg.epochs_constant_lr:
        return cfg.base_lr
    decay_span = cfg.epochs_total - cfg.epochs_constant_lr
    return cfg.base_lr * (cfg.epochs_total - epoch) / decay_span


def set_learning_rate(state: TrainState, lr: float) -> None:
    for opt in state.optimizers.values():
        for group in opt.param_groups:
            group["lr"] = lr


def _set_requires_grad(net: torch.nn.Module, flag: bool) -> None:
    for p in net.parameters():
        p.requires_grad_(flag)


def generator_substep(state: TrainState, bundle, weights: LossWeights) -> LossComponents:
    """Update both generators on the composite objective; returns the
    generator-side components evaluated before the update."""
    m = state.models
    _set_requires_grad(m.d_v, False)
    _set_requires_grad(m.d_t, False)
    try:
        components = generator_components(bundle, m.d_t, m.d_v, m.fe, weights)
        generator_total, _ = total_objective(components, weights)
        if isinstance(generator_total, torch.Tensor):
            state.optimizers["g_v"].zero_grad(set_to_none=True)
            state.optimizers["g_t"].zero_grad(set_to_none=True)
            generator_total.backward()
            state.optimizers["g_v"].step()
            state.optimizers["g_t"].step()
    finally:
        _set_requires_grad(m.d_v, True)
        _set_requires_grad(m.d_t, True)
    return components


def discriminator_substep(state: TrainState, bundle, weights: LossWeights) -> tuple[float, float]:
    """Update d_v then d_t on their least-squares losses with detached fakes;
    returns (adv_d_t, adv_d_v) evaluated before the updates."""
    m = state.models
    adv_d_v = adv_d_t = 0.0
    if weights.adv_v_enabled:
        loss_v = lsgan_discriminator_loss(m.d_v(bundle.real_v), m.d_v(bundle.syn_v.detach()))
        require_finite(loss_v, "adv_d_v")
        state.optimizers["d_v"].zero_grad(set_to_none=True)
        loss_v.backward()
        state.optimizers["d_v"].step()
        adv_d_v = float(loss_v.detach())
    if weights.adv_t_enabled:
        loss_t = lsgan_discriminator_loss(m.d_t(bundle.real_t), m.d_t(bundle.syn_t.detach()))
        require_finite(loss_t, "adv_d_t")
        state.optimizers["d_t"].zero_grad(set_to_none=True)
        loss_t.backward()
        state.optimizers["d_t"].step()
        adv_d_t = float(loss_t.detach())
    return adv_d_t, adv_d_v


def train_step(
    state: TrainState,
    pair: tuple[torch.Tensor, torch.Tensor],
    weights: LossWeights,
) -> tuple[TrainState, LossComponents]:
    """One full iteration on a (source, visible) batch.

    Builds the forward bundle, steps the generators, then each
    discriminator, and returns the loss components as evaluated before any
    parameter update.  Non-finite losses raise :class:`NumericError` naming
    the component.
    """
    real_t, real_v = pair
    if real_t.shape != real_v.shape:
        raise ValidationError(
            f"pair shape mismatch: {tuple(real_t.shape)} vs {tuple(real_v.shape)}")
    m = state.models
    bundle = make_forward_bundle(m.g_t, m.g_v, real_t, real_v,
                                 with_cycle=weights.uses_cycle)
    gen_components = generator_substep(state, bundle, weights)
    adv_d_t, adv_d_v = discriminator_substep(state, bundle, weights)
    state.iteration += 1
    gen_values = {name: getattr(gen_components, name)
                  for name in LossComponents.field_names()
                  if name not in ("adv_d_t", "adv_d_v")}
    components = LossComponents(**gen_values, adv_d_t=adv_d_t, adv_d_v=adv_d_v).as_floats()
    return state, components


def _shuffled(indices: list[int], seed: int, epoch: int) -> list[int]:
    order = list(indices)
    random.Random(seed * 1_000_003 + epoch).shuffle(order)
    return order


def _epoch_mean(rows: list[LossComponents]) -> dict[str, float]:
    n = len(rows)
    return {name: sum(getattr(r, name) for r in rows) / n
            for name in LossComponents.field_names()}


def train(
    cfg: TrainConfig,
    resume_from: Optional[str | Path] = None,
    manifest: Optional[DatasetManifest] = None,
    log_path: Optional[str | Path] = None,
) -> CheckpointBundle:
    """Run the full schedule over the train split; returns the final bundle.

    The train manifest order is reshuffled each epoch with a seed derived
    from (cfg.seed, epoch), so runs and resumed runs are reproducible.
    Checkpoints go to ``cfg.checkpoint_dir/epoch_NNNN`` every
    ``cfg.checkpoint_every`` epochs and to ``cfg.checkpoint_dir/final`` at
    the end; an append-only CSV log of per-iteration components is kept at
    ``cfg.checkpoint_dir/training_log.csv`` unless overridden.
    """
    if manifest is None:
        manifest = scan_paired_dataset(cfg.dataset_root, cfg.dataset_layout)
    samples = list(manifest.train)

    loss_history: list[dict] = []
    start_epoch = 1
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        if bundle.config.preset != cfg.preset:
            warnings.warn(
                f"resuming a run trained with preset {bundle.config.preset!r} "
                f"under preset {cfg.preset!r}; the current config wins")
        state = restore_train_state(bundle, cfg)
        loss_history = list(bundle.loss_history)
        start_epoch = bundle.epoch + 1
    else:
        state = init_train_state(cfg)

    ckpt_root = Path(cfg.checkpoint_dir)
    ckpt_root.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path is not None else ckpt_root / "training_log.csv"
    write_header = not log_path.exists()
    with open(log_path, "a", newline="") as log_file:
        log = csv.writer(log_file)
        if write_header:
            log.writerow(LOG_COLUMNS)
        for epoch in range(start_epoch, cfg.epochs_total + 1):
            lr = lr_at_epoch(epoch, cfg)
            set_learning_rate(state, lr)
            order = _shuffled(list(range(len(samples))), cfg.seed, epoch)
            epoch_rows: list[LossComponents] = []
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                pairs = [load_pair(samples[i], cfg.image_size) for i in chunk]
                batch_t = torch.cat([p[0] for p in pairs])
                batch_v = torch.cat([p[1] for p in pairs])
                state, components = train_step(state, (batch_t, batch_v), cfg.weights)
                epoch_rows.append(components)
                log.writerow([epoch, state.iteration,
                              *(repr(getattr(components, f)) for f in _LOG_FIELDS),
                              repr(lr)])
            state.epoch = epoch
            loss_history.append({"epoch": epoch, "lr": lr, **_epoch_mean(epoch_rows)})
            if epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs_total:
                save_checkpoint(make_bundle(state, cfg, loss_history),
                                ckpt_root / f"epoch_{epoch:04d}")
    final = make_bundle(state, cfg, loss_history)
    save_checkpoint(final, ckpt_root / "final")
    return final


def make_bundle(state: TrainState, cfg: TrainConfig,
                loss_history: list[dict]) -> CheckpointBundle:
    return CheckpointBundle(
        config=cfg,
        epoch=state.epoch,
        net_states={name: net.state_dict() for name, net in state.models.named().items()},
        optim_states={name: opt.state_dict() for name, opt in state.optimizers.items()},
        loss_history=list(loss_history),
    )


def restore_train_state(bundle: CheckpointBundle, cfg: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild networks and optimizers from a checkpoint bundle."""
    cfg = cfg if cfg is not None else bundle.config
    state = init_train_state(cfg)
    for name, net in state.models.named().items():
        net.load_state_dict(bundle.net_states[name])
    for name, opt in state.optimizers.items():
        opt.load_state_dict(bundle.optim_states[name])
    state.epoch = bundle.epoch
    return state


def save_checkpoint(bundle: CheckpointBundle, path: str | Path) -> None:
    """Write a checkpoint directory atomically (write temp, then rename)."""
    path = Path(path)
    tmp = path.parent / (path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for name, net_state in bundle.net_states.items():
        torch.save(net_state, tmp / f"{name}.pt")
    torch.save(bundle.optim_states, tmp / "optimizers.pt")
    meta = {
        "format_version": bundle.format_version,
        "epoch": bundle.epoch,
        "config": bundle.config.to_dict(),
        "loss_history": bundle.loss_history,
    }
    (tmp / "meta.json").write_text(json.dumps(meta, indent=2))
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    """Read a checkpoint directory; any inconsistency raises CheckpointError."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise CheckpointError(f"not a checkpoint directory (no meta.json): {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata {meta_path}: {exc}") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint format version {version!r} "
            f"(this build reads version {CHECKPOINT_FORMAT_VERSION}): {path}")
    try:
        net_states = {name: torch.load(path / f"{name}.pt", weights_only=True)
                      for name in _NETWORKS}
        optim_states = torch.load(path / "optimizers.pt", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint payload under {path}: {exc}") from exc
    return CheckpointBundle(
        config=TrainConfig.from_dict(meta["config"]),
        epoch=int(meta["epoch"]),
        net_states=net_states,
        optim_states=optim_states,
        loss_history=list(meta.get("loss_history", [])),
        format_version=version,
    )
