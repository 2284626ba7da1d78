"""Central-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, ParameterError
from .nn import ParameterSet
from .tensor import Tensor, no_grad


def grad_check(f: Callable[[ParameterSet], Tensor], params: ParameterSet, eps: float = 1e-5) -> float:
    """Max over unfrozen parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)."""
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    trainable = params.trainable()
    if any(t.dtype != np.float64 for _, t in trainable):
        raise ContractError("grad_check needs float64 parameters")

    params.zero_grad()
    f(params).backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for n, t in trainable}
    params.zero_grad()

    worst = 0.0
    with no_grad():
        for name, t in trainable:
            flat = t.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f(params).item()
                flat[i] = orig - eps
                down = f(params).item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom, initial=0.0)))
    return worst
