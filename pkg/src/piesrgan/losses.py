"""Composite generator loss and the relativistic adversarial pair.

All box tensors are channels-last ``(B, D, H, W, C)``.  Derivatives use
second-order central differences on points that are interior along every
axis, since training subboxes are not periodic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor, add, as_tensor, clip, getitem, log_sigmoid, mean, mul, square, sub, tsum

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 5e-3
    pixel: float = 1.0
    gradient: float = 0.5
    continuity: float = 0.1

    def __post_init__(self):
        if min(self.adversarial, self.pixel, self.gradient, self.continuity) < 0:
            raise ValidationError("loss weights must be nonnegative")

    def for_stage(self, stage: int) -> "LossWeights":
        """Stage 2 has no reference field, so the supervised terms are switched off."""
        if stage == 2:
            return LossWeights(self.adversarial, 0.0, 0.0, self.continuity)
        return self

    @property
    def needs_target(self) -> bool:
        return self.pixel > 0 or self.gradient > 0


def _check_pair(R: Tensor, H: Tensor):
    if R.shape != H.shape:
        raise ShapeError(f"shape mismatch {R.shape} vs {H.shape}")
    if R.ndim != 5:
        raise ShapeError(f"expected (B, D, H, W, C) boxes, got {R.shape}")


def pixel_loss(R, H) -> Tensor:
    """Per-channel mean squared error, summed over channels."""
    R, H = as_tensor(R), as_tensor(H)
    _check_pair(R, H)
    sites = int(np.prod(R.shape[:-1]))
    return mul(tsum(square(sub(R, H))), 1.0 / sites)


def _interior_diff(x: Tensor, axis: int, spacing: float) -> Tensor:
    """Central difference along spatial ``axis`` (1..3) at sites interior in all axes."""
    inner = slice(1, -1)
    plus = [slice(None), inner, inner, inner, slice(None)]
    minus = list(plus)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    return mul(sub(getitem(x, tuple(plus)), getitem(x, tuple(minus))), 0.5 / spacing)


def _check_extent(x: Tensor):
    if min(x.shape[1:4]) < 3:
        raise ShapeError(f"boxes need at least 3 points per axis for central differences, got {x.shape}")


def gradient_loss(R, H, spacing: float = 1.0) -> Tensor:
    """MSE of the discrete gradient per (channel, direction), summed."""
    R, H = as_tensor(R), as_tensor(H)
    _check_pair(R, H)
    _check_extent(R)
    diff = sub(R, H)
    sites = R.shape[0] * int(np.prod([s - 2 for s in R.shape[1:4]]))
    total = None
    for axis in (1, 2, 3):
        term = tsum(square(_interior_diff(diff, axis, spacing)))
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / sites)


def divergence(u, spacing: float = 1.0) -> Tensor:
    u = as_tensor(u)
    if u.ndim != 5 or u.shape[-1] != 3:
        raise ShapeError(f"continuity needs (B, D, H, W, 3) velocity, got {u.shape}")
    _check_extent(u)
    div = None
    for d in range(3):
        part = _interior_diff(getitem(u, (Ellipsis, slice(d, d + 1))), d + 1, spacing)
        div = part if div is None else add(div, part)
    return div


def continuity_loss(u, spacing: float = 1.0) -> Tensor:
    """Mean square of the central-difference divergence."""
    return mean(square(divergence(u, spacing)))


def relativistic_adv_loss(logits_real, logits_fake):
    """``(L_D, L_G)`` of the relativistic average GAN on raw logits."""
    cr, cf = as_tensor(logits_real), as_tensor(logits_fake)
    if cr.size == 0 or cf.size == 0:
        raise ValidationError("relativistic loss needs at least one real and one fake logit")
    d_real = clip(sub(cr, mean(cf)), -LOGIT_CLAMP, LOGIT_CLAMP)
    d_fake = clip(sub(cf, mean(cr)), -LOGIT_CLAMP, LOGIT_CLAMP)
    # log(1 - sigmoid(a)) = log_sigmoid(-a)
    loss_d = mul(add(mean(log_sigmoid(d_real)), mean(log_sigmoid(mul(d_fake, -1.0)))), -1.0)
    loss_g = mul(add(mean(log_sigmoid(mul(d_real, -1.0))), mean(log_sigmoid(d_fake))), -1.0)
    return loss_d, loss_g


def total_loss(R, H, logits_real, logits_fake, weights: LossWeights,
               velocity_scale=None, spacing: float = 1.0):
    """Weighted composite generator loss and its individual terms.

    ``R``/``H`` hold channels (z, u, v, w).  ``velocity_scale`` optionally
    multiplies the velocity channels before the continuity term, which lets
    per-channel normalized boxes be checked against the physical divergence.
    Terms with zero weight are reported as 0 and not evaluated.
    """
    R = as_tensor(R)
    if weights.needs_target and H is None:
        raise ValidationError("pixel and gradient terms need a reference field")
    terms = {}
    zero = Tensor(0.0)
    if weights.adversarial > 0:
        terms["adversarial"] = relativistic_adv_loss(logits_real, logits_fake)[1]
    else:
        terms["adversarial"] = zero
    terms["pixel"] = pixel_loss(R, H) if weights.pixel > 0 else zero
    terms["gradient"] = gradient_loss(R, H, spacing) if weights.gradient > 0 else zero
    if weights.continuity > 0:
        vel = getitem(R, (Ellipsis, slice(1, 4)))
        if velocity_scale is not None:
            vel = mul(vel, np.asarray(velocity_scale, dtype=float))
        terms["continuity"] = continuity_loss(vel, spacing)
    else:
        terms["continuity"] = zero
    total = add(add(mul(terms["adversarial"], weights.adversarial),
                    mul(terms["pixel"], weights.pixel)),
                add(mul(terms["gradient"], weights.gradient),
                    mul(terms["continuity"], weights.continuity)))
    return total, terms
