"""RMSProp on named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RMSPropState:
    learning_rate: float = 1e-4
    decay_rho: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.decay_rho < 1.0:
            raise ValueError("decay_rho must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def rmsprop_step(params: dict, grads: dict, state: RMSPropState):
    """Apply one RMSProp update.

    ``acc <- rho*acc + (1-rho)*g**2`` and ``p <- p - lr*g/(sqrt(acc)+eps)``.
    Parameters without a gradient entry are left alone.  Returns new
    ``(params, state)``; the inputs are not modified.
    """
    rho, lr, eps = state.decay_rho, state.learning_rate, state.epsilon
    new_params = dict(params)
    new_acc = dict(state.accumulators)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        acc = new_acc.get(name)
        if acc is None:
            acc = np.zeros_like(p)
        acc = rho * acc + (1.0 - rho) * g * g
        new_acc[name] = acc
        new_params[name] = p - lr * g / (np.sqrt(acc) + eps)
    return new_params, RMSPropState(lr, rho, eps, new_acc)
