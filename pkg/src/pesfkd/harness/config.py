"""JSON experiment configuration.

Keys mirror the dataclass field names; unknown keys are rejected at every
nesting level so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..adapters import AdapterSpec
from ..data import SyntheticSpec
from ..errors import ParameterError, ParseError
from ..losses import LossWeights
from ..nn import ModelSpec

REGIMES = ("vanilla", "finetune", "adapter")
DEFAULT_TEACHER_LR = {"vanilla": 0.0, "finetune": 1e-3, "adapter": 1e-4}

# Independent RNG streams derived from the run seed.
STREAM_TEACHER_INIT, STREAM_STUDENT_INIT, STREAM_ADAPTER_INIT, STREAM_SHUFFLE = range(4)


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...]
    activation: str = "relu"

    def spec(self, input_dim: int, num_classes: int, init_seed: int) -> ModelSpec:
        return ModelSpec(input_dim, tuple(self.hidden_dims), num_classes, self.activation, init_seed)


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 10
    samples_per_class: int = 200
    dim: int = 2
    cluster_std: float = 0.5
    overlap: float = 0.0
    seed: int = 0
    mean_scale: float = 4.0
    train_fraction: float = 0.8
    standardize: bool = True

    def synthetic(self) -> SyntheticSpec:
        names = {f.name for f in dataclasses.fields(SyntheticSpec)}
        return SyntheticSpec(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


@dataclass(frozen=True)
class DistillConfig:
    name: str = "run"
    regime: str = "adapter"
    tau: float = 4.0
    alpha: float = 0.9
    teacher_task_weight: float = 0.5
    # None: on for finetune/adapter. Always off for vanilla.
    feedback: bool | None = None
    label_smoothing: float = 0.0
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple[int, ...] = (60, 75, 90)
    lr_decay: float = 0.1
    # None: 1e-3 for finetune, 1e-4 for adapter.
    teacher_lr: float | None = None
    teacher_momentum: float = 0.9
    teacher_weight_decay: float = 5e-4
    epochs: int = 100
    pretrain_epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    precision: str = "f32"
    teacher: ModelConfig = ModelConfig((256, 256))
    student: ModelConfig = ModelConfig((32,))
    adapter: AdapterSpec = AdapterSpec()
    data: DataConfig = DataConfig()

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ParameterError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.precision not in ("f32", "f64"):
            raise ParameterError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if list(self.milestones) != sorted(self.milestones):
            raise ParameterError(f"milestones must be ascending, got {self.milestones}")
        if self.teacher_lr is not None and self.teacher_lr < 0:
            raise ParameterError(f"teacher_lr must be >= 0, got {self.teacher_lr}")
        self.weights  # validates ranges

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.teacher_task_weight, self.label_smoothing)

    @property
    def use_feedback(self) -> bool:
        if self.regime == "vanilla":
            return False
        return True if self.feedback is None else bool(self.feedback)

    @property
    def effective_teacher_lr(self) -> float:
        if self.regime == "vanilla":
            return 0.0
        return DEFAULT_TEACHER_LR[self.regime] if self.teacher_lr is None else float(self.teacher_lr)

    def with_seed(self, seed: int) -> "DistillConfig":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def pretrain_key(self) -> str:
        """Identifies everything teacher pretraining depends on."""
        d = self.to_dict()
        keep = ("lr", "momentum", "weight_decay", "milestones", "lr_decay", "pretrain_epochs", "batch_size",
                "seed", "precision", "teacher", "data")
        return hashlib.sha256(canonical_json({k: d[k] for k in keep}).encode()).hexdigest()


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ParseError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in raw.items():
        if key in _NESTED and cls is DistillConfig:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


_NESTED = {"teacher": ModelConfig, "student": ModelConfig, "adapter": AdapterSpec, "data": DataConfig}


def config_from_dict(raw: dict) -> DistillConfig:
    return _build(DistillConfig, raw, "config")


def load_config(path: str | os.PathLike) -> DistillConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    cfg = config_from_dict(raw)
    if "name" not in raw:
        cfg = dataclasses.replace(cfg, name=os.path.splitext(os.path.basename(path))[0])
    return cfg
