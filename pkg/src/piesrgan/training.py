"""Two-stage adversarial training with RMSProp.

Stage 1 alternates one discriminator step and one generator step per batch
of paired (filtered, DNS) boxes.  Stage 2 continues the generator alone on
unpaired filtered boxes against the frozen discriminator.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import NumericalAbort, ShapeError, StageMismatchError, ValidationError
from .losses import LossWeights, relativistic_adv_loss, total_loss
from .networks import NetworkParams, discriminator_forward, generator_forward, save_checkpoint
from .pifd import atomic_write_text
from .pipeline import SamplePair, epoch_order
from .tensor import GradientTape, RMSPropState, Tensor, concat, getitem, rmsprop_step

LOG_HEADER = "# step L_adv L_pixel L_gradient L_continuity total\n"


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    batch_size: int = 32
    subbox: int = 16
    epochs: int = 1
    max_steps: Optional[int] = None
    seed: int = 0
    gen_learning_rate: float = 1e-4
    disc_learning_rate: float = 1e-4
    decay_rho: float = 0.9
    epsilon: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    log_path: Optional[str] = None
    spacing: float = 1.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValidationError(f"stage must be 1 or 2, got {self.stage}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ValidationError("checkpoint_every needs checkpoint_dir")


class TrainResult(NamedTuple):
    generator: NetworkParams
    discriminator: NetworkParams
    log: list


def velocity_scale(pairs: Sequence[SamplePair]) -> np.ndarray:
    """``(B, 1, 1, 1, 3)`` factors that undo per-channel velocity normalization
    up to one common constant, so the continuity term sees a physical divergence."""
    std = np.sqrt(np.stack([p.variances[1:4] for p in pairs]))
    ref = np.sqrt(np.mean(std ** 2, axis=1, keepdims=True))
    return (std / ref)[:, None, None, None, :]


def epoch_batches(pairs: Sequence[SamplePair], cfg: TrainConfig):
    """Sample lists in training order; each epoch visits every sample once."""
    for epoch in range(cfg.epochs):
        order = epoch_order(len(pairs), cfg.seed, epoch)
        for start in range(0, len(order), cfg.batch_size):
            yield [pairs[i] for i in order[start:start + cfg.batch_size]]


def _check_pairs(pairs, cfg: TrainConfig, gen: NetworkParams):
    if not pairs:
        raise ValidationError("training set is empty")
    stages = {p.stage for p in pairs}
    if stages != {cfg.stage}:
        raise StageMismatchError(f"stage {cfg.stage} training got stage {sorted(stages)} samples")
    box = cfg.subbox
    want = (box, box, box, gen.config.in_channels)
    for p in pairs:
        if p.input_box.shape != want:
            raise ShapeError(f"sample box {p.input_box.shape} does not match {want}")


def _grads_by_name(tape: GradientTape, loss: Tensor, weights: dict) -> dict:
    grads = tape.backward(loss)
    return {name: grads[t] for name, t in weights.items() if t in grads}


def _scalars(terms: dict, total: Tensor) -> dict:
    row = {k: float(v.item()) for k, v in terms.items()}
    row["total"] = float(total.item())
    return row


def format_log(rows: Sequence[dict]) -> str:
    lines = [LOG_HEADER]
    for r in rows:
        lines.append(f"{r['step']} {r['adversarial']:.17g} {r['pixel']:.17g} {r['gradient']:.17g} "
                     f"{r['continuity']:.17g} {r['total']:.17g}\n")
    return "".join(lines)


def read_log(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)


def _save_pair(cfg: TrainConfig, tag: str, gen: NetworkParams, disc: NetworkParams):
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    save_checkpoint(os.path.join(cfg.checkpoint_dir, f"gen_{tag}.ckpt"), gen)
    save_checkpoint(os.path.join(cfg.checkpoint_dir, f"disc_{tag}.ckpt"), disc)


def _abort(cfg, step, rows, gen, disc, what):
    if cfg.checkpoint_dir:
        _save_pair(cfg, "last_good", gen, disc)
    if cfg.log_path:
        atomic_write_text(cfg.log_path, format_log(rows))
    raise NumericalAbort(f"non-finite {what} at batch {step}", index=step, payload=(gen, disc))


def generator_loss(gen: NetworkParams, disc: NetworkParams, x, y, vscale, cfg: TrainConfig,
                   weights: LossWeights, rng=None, gen_weights=None, real_reference=None):
    """Forward pass of the composite loss for one batch.

    In stage 1 the discriminator sees real and generated boxes as one batch
    in train mode; its batch-norm statistics from this pass are discarded.
    In stage 2 it runs in eval mode and the real-logit batch mean is
    replaced by ``real_reference``.
    """
    fake = generator_forward(gen, x, gen_weights)
    logits_real = logits_fake = None
    if weights.adversarial > 0:
        if cfg.stage == 1:
            logits, _ = discriminator_forward(disc, concat([Tensor._wrap(y), fake], axis=0),
                                              "train", rng)
            b = x.shape[0]
            logits_real, logits_fake = getitem(logits, slice(0, b)), getitem(logits, slice(b, None))
        else:
            logits_fake, _ = discriminator_forward(disc, fake, "eval")
            logits_real = np.full((1, 1), real_reference)
    return total_loss(fake, y, logits_real, logits_fake, weights, vscale, cfg.spacing)


def discriminator_step(gen, disc, x, y, state, rng):
    """One RMSProp step on the discriminator loss.

    Returns ``(disc, state, loss)``; ``disc`` is None when the loss is not finite.
    """
    fake = generator_forward(gen, x).data
    with GradientTape() as tape:
        w = disc.tensors(requires_grad=True)
        logits, buffers = discriminator_forward(disc, np.concatenate([y, fake]), "train", rng, w)
        b = x.shape[0]
        loss_d, _ = relativistic_adv_loss(getitem(logits, slice(0, b)),
                                          getitem(logits, slice(b, None)))
    if not math.isfinite(loss_d.item()):
        return None, state, loss_d.item()
    params, state = rmsprop_step(disc.params, _grads_by_name(tape, loss_d, w), state)
    return disc.with_params(params, buffers), state, loss_d.item()


def generator_step(gen, disc, x, y, vscale, cfg: TrainConfig, weights: LossWeights,
                   state: RMSPropState, rng=None, real_reference=0.0):
    """One RMSProp step on the composite loss; the discriminator is only read.

    Returns ``(gen, state, losses)`` with ``gen`` None on a non-finite loss.
    """
    with GradientTape() as tape:
        w = gen.tensors(requires_grad=True)
        total, terms = generator_loss(gen, disc, x, y, vscale, cfg, weights, rng, w,
                                      real_reference)
    row = _scalars(terms, total)
    if not all(math.isfinite(v) for v in row.values()):
        return None, state, row
    params, state = rmsprop_step(gen.params, _grads_by_name(tape, total, w), state)
    return gen.with_params(params), state, row


def mean_real_logit(disc: NetworkParams, pairs: Sequence[SamplePair], batch_size: int = 32) -> float:
    """Eval-mode discriminator logit averaged over the targets of ``pairs``."""
    total, count = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        y = np.stack([p.target_box for p in pairs[start:start + batch_size]])
        logits, _ = discriminator_forward(disc, y, "eval")
        total += float(logits.data.sum())
        count += y.shape[0]
    return total / count


def _train(pairs, gen, disc, cfg: TrainConfig):
    _check_pairs(pairs, cfg, gen)
    weights = cfg.weights.for_stage(cfg.stage)
    gstate = RMSPropState(cfg.gen_learning_rate, cfg.decay_rho, cfg.epsilon)
    dstate = RMSPropState(cfg.disc_learning_rate, cfg.decay_rho, cfg.epsilon)
    real_reference = float(disc.meta.get("real_logit_mean", 0.0))
    rows = []
    step = 0
    for chunk in epoch_batches(pairs, cfg):
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        step += 1
        x = np.stack([p.input_box for p in chunk])
        y = None if cfg.stage == 2 else np.stack([p.target_box for p in chunk])
        vscale = velocity_scale(chunk)

        disc_loss = float("nan")
        if cfg.stage == 1:
            new_disc, dstate, disc_loss = discriminator_step(
                gen, disc, x, y, dstate, np.random.default_rng([cfg.seed, step, 0]))
            if new_disc is None:
                _abort(cfg, step, rows, gen, disc, "discriminator loss")
            disc = new_disc

        rng = np.random.default_rng([cfg.seed, step, 1])
        new_gen, gstate, row = generator_step(gen, disc, x, y, vscale, cfg, weights, gstate, rng,
                                              real_reference)
        row = {"step": step, **row, "disc": disc_loss}
        if new_gen is None:
            _abort(cfg, step, rows, gen, disc, "generator loss")
        gen = new_gen
        rows.append(row)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            _save_pair(cfg, f"{step:06d}", gen, disc)

    if cfg.stage == 1:
        meta = {**disc.meta, "real_logit_mean": mean_real_logit(disc, pairs, cfg.batch_size)}
        disc = NetworkParams(disc.kind, disc.config, disc.params, disc.buffers, meta)
    if cfg.log_path:
        atomic_write_text(cfg.log_path, format_log(rows))
    if cfg.checkpoint_dir:
        _save_pair(cfg, "final", gen, disc)
    return TrainResult(gen, disc, rows)


def train_stage1(pairs: Sequence[SamplePair], gen: NetworkParams, disc: NetworkParams,
                 cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Joint training on paired boxes; returns updated networks and per-step losses."""
    if cfg.stage != 1:
        raise StageMismatchError("train_stage1 needs a stage-1 TrainConfig")
    return _train(pairs, gen, disc, cfg)


def train_stage2(pairs: Sequence[SamplePair], gen: NetworkParams, disc: NetworkParams,
                 cfg: TrainConfig = TrainConfig(stage=2)) -> TrainResult:
    """Generator-only training on unpaired boxes; ``disc`` is returned untouched."""
    if cfg.stage != 2:
        raise StageMismatchError("train_stage2 needs a stage-2 TrainConfig")
    return _train(pairs, gen, disc, cfg)
