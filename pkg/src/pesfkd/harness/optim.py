"""SGD with classical momentum and a step learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..nn import ParameterSet


def lr_schedule(base_lr: float, epoch: int, milestones: Sequence[int], decay: float) -> float:
    """``base_lr * decay**k`` where k counts the milestones with ``milestone <= epoch``."""
    passed = sum(1 for m in milestones if epoch >= m)
    return base_lr * decay**passed


class SGD:
    """v <- m v + (g + wd theta);  theta <- theta - lr v.  Frozen parameters are skipped."""

    def __init__(self, params: ParameterSet, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            if self.params.is_frozen(name) or t.grad is None:
                continue
            g = t.grad + self.weight_decay * t.data if self.weight_decay else t.grad
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            t.data -= lr * v
        self.params.zero_grad()


def sgd_step(params: ParameterSet, lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
             velocity: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """One functional SGD step; returns the (updated) velocity buffers."""
    opt = SGD(params, momentum, weight_decay)
    opt.velocity = velocity if velocity is not None else {}
    opt.step(lr)
    return opt.velocity
