from __future__ import annotations


__all__ = ["AdamState", "adam_step", "lr_schedule"]

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from hsnerf.autodiff import Tensor
from hsnerf.errors import NumericalError, ShapeError
from hsnerf.numbers import Array


@dataclass
class AdamState:
    """Adam moments per named parameter block.

    Defaults follow the training recipe: eps=1e-15, the usual betas.
    """

    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-15
    step_count: int = 0
    first_moment: Dict[str, Array] = field(default_factory=dict)
    second_moment: Dict[str, Array] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    state: AdamState,
    lr: Optional[float] = None,
) -> AdamState:
    """Bias-corrected Adam update, in place on ``params[name].data``.

    All gradients are validated before any parameter moves, so a non-finite
    gradient leaves the parameters and the state untouched.
    """
    if lr is None:
        lr = state.learning_rate
    if not lr >= 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam_step[{name}]", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        # moments keep the parameter dtype
        m = (b1 * m + (1.0 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1.0 - b2) * (g * g)).astype(p.dtype)
        state.first_moment[name] = m
        state.second_moment[name] = v

        update = (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p.data -= (lr * update).astype(p.dtype)

    return state


def lr_schedule(
    step: int,
    base_lr: float = 1e-2,
    final_lr: float = 1e-4,
    decay_steps: int = 20000,
) -> float:
    """Exponential decay from `base_lr` to `final_lr`, constant afterwards."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if decay_steps <= 0:
        raise ValueError("decay_steps must be positive")
    if base_lr <= 0 or final_lr <= 0:
        raise ValueError("learning rates must be positive")

    progress = min(step, decay_steps) / decay_steps
    return base_lr * math.exp(progress * math.log(final_lr / base_lr))
