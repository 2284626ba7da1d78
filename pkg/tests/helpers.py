"""Shared fixtures for gradient and harness tests."""

from __future__ import annotations

import dataclasses

import numpy as np

from pesfkd import adapters as A
from pesfkd import losses as L
from pesfkd import nn
from pesfkd.harness.config import DataConfig, DistillConfig, ModelConfig
from pesfkd.tensor import Tensor

GRAD_TOL = 1e-5
KD_WEIGHTS = L.LossWeights(alpha=0.9, teacher_task_weight=0.5)


def he_rescale(params: nn.ParameterSet, rng: np.random.Generator) -> None:
    """Redraw weights with He scaling and small random biases.

    Fan-in uniform init leaves deep activations tiny, which pushes many gradient
    entries below the central-difference noise floor; He scaling keeps them O(1).
    """
    for _, t in params.items():
        if t.data.ndim == 2:
            t.data[:] = rng.standard_normal(t.shape) * np.sqrt(2.0 / t.shape[0])
        else:
            t.data[:] = rng.standard_normal(t.shape) * 0.1


@dataclasses.dataclass
class KDFixture:
    t_params: nn.ParameterSet
    t_fwd: nn.Forward
    s_params: nn.ParameterSet
    s_fwd: nn.Forward
    x: Tensor
    y: Tensor
    tau: float = 4.0

    def student_loss(self) -> Tensor:
        z_t = self.t_fwd(self.t_params, self.x).logits
        z_s = self.s_fwd(self.s_params, self.x).logits
        return L.student_loss(z_s, z_t, self.y, KD_WEIGHTS, self.tau)

    def teacher_loss(self) -> Tensor:
        z_t = self.t_fwd(self.t_params, self.x).logits
        z_s = self.s_fwd(self.s_params, self.x).logits
        return L.teacher_loss(z_t, z_s, self.y, KD_WEIGHTS, self.tau, feedback=True)


def kd_fixture(seed: int, kind: str = "sequential", activation: str = "gelu") -> KDFixture:
    """3-layer teacher (4 -> 16 -> 16 -> 5) with one adapter, small student, batch of 8."""
    rng = np.random.default_rng(seed)
    t_params, t_fwd = nn.build(nn.ModelSpec(4, (16, 16), 5, activation, init_seed=seed))
    t_fwd = A.attach(t_params, t_fwd, A.AdapterSpec(kind, 4, activation, 2.0, (1,)), seed=seed + 1000)
    s_params, s_fwd = nn.build(nn.ModelSpec(4, (8,), 5, activation, init_seed=seed + 2000))
    he_rescale(t_params, rng)
    he_rescale(s_params, rng)
    x = Tensor(rng.standard_normal((8, 4)))
    y = L.one_hot(rng.integers(0, 5, size=8), 5)
    return KDFixture(t_params, t_fwd, s_params, s_fwd, x, y)


def small_config(**overrides) -> DistillConfig:
    """A fast config used by harness tests (seconds, not minutes)."""
    base = dict(
        name="small", regime="adapter", epochs=3, pretrain_epochs=5, milestones=(2,),
        teacher=ModelConfig((16, 16)), student=ModelConfig((8,)),
        data=DataConfig(num_classes=3, samples_per_class=40, cluster_std=0.5),
        adapter=A.AdapterSpec(bottleneck=2),
    )
    base.update(overrides)
    return DistillConfig(**base)
