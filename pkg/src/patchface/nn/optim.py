"""SGD with momentum and L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import LEARNABLE, NetworkParams, ParamGrads


@dataclass
class OptimizerState:
    """Momentum buffers (one per learnable tensor) plus a step counter."""

    buffers: dict = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams) -> "OptimizerState":
        return cls(buffers={n: np.zeros_like(getattr(params, n)) for n in LEARNABLE})


def sgd_step(params: NetworkParams, grads: ParamGrads, state: OptimizerState,
             lr: float, momentum: float, weight_decay: float) -> None:
    """One in-place update: v <- mu*v + (g + decay*w); w <- w - lr*v."""
    for name in LEARNABLE:
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        w = getattr(params, name)
        v = state.buffers[name]
        v *= momentum
        v += g + weight_decay * w
        w -= lr * v
    state.step_count += 1
