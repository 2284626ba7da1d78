"""Training objectives: cross-entropy, label smoothing, tempered softmax and the
temperature-squared KL distillation term, combined into student and teacher losses.

All batch reductions are means over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class SoftTarget:
    probs: Tensor
    log_probs: Tensor
    tau: float


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.9
    teacher_task_weight: float = 0.5
    smoothing: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.teacher_task_weight >= 0.0:
            raise ParameterError(f"teacher_task_weight must be >= 0, got {self.teacher_task_weight}")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ParameterError(f"smoothing must lie in [0, 1], got {self.smoothing}")


class LossTerms(NamedTuple):
    total: Tensor
    task: Tensor
    kl: Tensor | None


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")


def tempered_softmax(z: Tensor, tau: float) -> SoftTarget:
    _check_tau(tau)
    log_p = T.log_softmax(T.scale(z, 1.0 / tau), axis=1)
    return SoftTarget(probs=T.exp(log_p), log_probs=log_p, tau=tau)


def cross_entropy(y: Tensor, p: SoftTarget | Tensor) -> Tensor:
    """Batch mean of -sum_k y_k log p_k, with p floored at 1e-12."""
    y = T.as_tensor(y)
    if isinstance(p, SoftTarget):
        log_p = T.clamp_min(p.log_probs, math.log(PROB_FLOOR))
    else:
        log_p = T.log(T.clamp_min(p, PROB_FLOOR))
    if y.shape != log_p.shape:
        raise DimensionError(f"targets {y.shape} and probabilities {log_p.shape} differ")
    if not np.allclose(y.data.sum(axis=1), 1.0, atol=1e-6):
        raise ParameterError("target rows must sum to 1")
    return -T.mean(T.tsum(y * log_p, axis=1))


def label_smooth(y: Tensor, alpha_ls: float) -> Tensor:
    if not 0.0 <= alpha_ls <= 1.0:
        raise ParameterError(f"smoothing must lie in [0, 1], got {alpha_ls}")
    k = y.shape[1]
    return Tensor(y.data * (1.0 - alpha_ls) + alpha_ls / k)


def one_hot(labels, num_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return Tensor(out)


def kd_kl_loss(z_s: Tensor, z_t: Tensor, tau: float, detach_teacher: bool = False) -> Tensor:
    """tau^2 * batch-mean KL(p_t || p_s) of the tempered distributions.

    Gradients reach both logit sets unless ``detach_teacher`` is set.
    """
    _check_tau(tau)
    if z_s.shape != z_t.shape:
        raise DimensionError(f"student logits {z_s.shape} and teacher logits {z_t.shape} differ")
    if detach_teacher:
        z_t = z_t.detach()
    log_ps = T.log_softmax(T.scale(z_s, 1.0 / tau))
    log_pt = T.log_softmax(T.scale(z_t, 1.0 / tau))
    kl_rows = T.tsum(T.exp(log_pt) * (log_pt - log_ps), axis=1)
    return T.scale(T.mean(kl_rows), tau * tau)


def student_loss_terms(z_s: Tensor, z_t: Tensor, y: Tensor, w: LossWeights, tau: float,
                       detach_teacher: bool = True) -> LossTerms:
    target = label_smooth(y, w.smoothing) if w.smoothing > 0 else y
    task = cross_entropy(target, tempered_softmax(z_s, 1.0))
    kl = kd_kl_loss(z_s, z_t, tau, detach_teacher=detach_teacher)
    total = T.scale(kl, w.alpha) + T.scale(task, 1.0 - w.alpha)
    return LossTerms(total, task, kl)


def student_loss(z_s: Tensor, z_t: Tensor, y: Tensor, w: LossWeights, tau: float,
                 detach_teacher: bool = True) -> Tensor:
    """alpha * KD term + (1 - alpha) * task cross-entropy."""
    return student_loss_terms(z_s, z_t, y, w, tau, detach_teacher).total


def teacher_loss_terms(z_t: Tensor, z_s: Tensor, y: Tensor, w: LossWeights, tau: float, feedback: bool,
                       detach_student: bool = True) -> LossTerms:
    task = cross_entropy(y, tempered_softmax(z_t, 1.0))
    total = T.scale(task, w.teacher_task_weight)
    kl = None
    if feedback:
        kl = kd_kl_loss(z_s.detach() if detach_student else z_s, z_t, tau)
        total = total + T.scale(kl, w.alpha)
    return LossTerms(total, task, kl)


def teacher_loss(z_t: Tensor, z_s: Tensor, y: Tensor, w: LossWeights, tau: float, feedback: bool,
                 detach_student: bool = True) -> Tensor:
    """w_t * task cross-entropy, plus alpha * KD term (into the teacher) when
    ``feedback`` is on."""
    return teacher_loss_terms(z_t, z_s, y, w, tau, feedback, detach_student).total
