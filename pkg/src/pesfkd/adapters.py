"""Bottleneck adapters attached to a frozen teacher.

An adapter at hidden layer ``i`` rewrites the activation ``h`` (width ``d``) as

    sequential:         h + f(h W_down) W_up
    low_rank_parallel:  h + (h W_down) W_up
    scaled_parallel:    h + s * f(h W_down) W_up

with ``W_down`` of shape (d, r) and ``W_up`` of shape (r, d). ``W_up`` starts at
zero, so a freshly attached adapter is exactly the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecError
from .nn import Forward, ParameterSet, set_frozen
from .tensor import Tensor

KINDS = ("sequential", "low_rank_parallel", "scaled_parallel")
PREFIX = "adapter"


@dataclass(frozen=True)
class AdapterSpec:
    kind: str = "sequential"
    bottleneck: int = 3
    activation: str = "relu"
    scaling: float = 1.0
    # None means after every hidden activation.
    insertion_points: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"adapter kind must be one of {KINDS}, got {self.kind!r}")
        if self.bottleneck < 1:
            raise SpecError(f"bottleneck must be positive, got {self.bottleneck}")
        if self.activation not in ("relu", "gelu"):
            raise SpecError(f"adapter activation must be relu or gelu, got {self.activation!r}")
        if self.kind == "scaled_parallel" and not self.scaling > 0:
            raise SpecError(f"scaled_parallel needs scaling > 0, got {self.scaling}")
        if self.insertion_points is not None:
            object.__setattr__(self, "insertion_points", tuple(int(i) for i in self.insertion_points))

    def points(self, n_hidden: int) -> tuple[int, ...]:
        return tuple(range(n_hidden)) if self.insertion_points is None else self.insertion_points

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.insertion_points is not None:
            d["insertion_points"] = list(self.insertion_points)
        return d


def adapter_forward(h: Tensor, down: Tensor, up: Tensor, spec: AdapterSpec) -> Tensor:
    if h.data.ndim != 2 or h.shape[1] != down.shape[0] or up.shape != (down.shape[1], down.shape[0]):
        raise DimensionError(f"adapter weights {down.shape}/{up.shape} do not fit activation {h.shape}")
    z = h @ down
    if spec.kind != "low_rank_parallel":
        z = T.activation(spec.activation)(z)
    branch = z @ up
    if spec.kind == "scaled_parallel":
        branch = T.scale(branch, spec.scaling)
    return h + branch


def _host_widths(widths: Sequence[int], points: Sequence[int]) -> list[int]:
    return [widths[i] for i in points]


def adapter_param_count(spec: AdapterSpec, hidden_widths: Sequence[int]) -> int:
    """Parameters added by ``spec`` to a network with these hidden widths."""
    points = spec.points(len(hidden_widths))
    return sum(2 * d * spec.bottleneck for d in _host_widths(hidden_widths, points))


def _make_hook(i: int, spec: AdapterSpec):
    def hook(h: Tensor, params: ParameterSet) -> Tensor:
        return adapter_forward(h, params[f"{PREFIX}{i}.down"], params[f"{PREFIX}{i}.up"], spec)

    return hook


def attach(params: ParameterSet, fwd: Forward, spec: AdapterSpec, seed: int = 0) -> Forward:
    """Register adapters in ``params``, freeze everything else, return the new forward.

    The incoming forward is left untouched; the returned one applies an adapter
    after each hidden activation listed in ``spec``.
    """
    hidden = list(fwd.spec.hidden_dims)
    points = spec.points(len(hidden))
    for i in points:
        if not 0 <= i < len(hidden):
            raise SpecError(f"insertion point {i} is not a hidden layer index (0..{len(hidden) - 1})")
        if i in fwd.hooks:
            raise SpecError(f"hidden layer {i} already has an adapter")
        if spec.bottleneck >= hidden[i]:
            raise SpecError(f"bottleneck {spec.bottleneck} must be smaller than host width {hidden[i]}")
    if len(set(points)) != len(points):
        raise SpecError(f"duplicate insertion points {points}")

    rng = np.random.default_rng(seed)
    hooks = dict(fwd.hooks)
    for i in points:
        d = hidden[i]
        bound = 1.0 / np.sqrt(d)
        params.add(f"{PREFIX}{i}.down", Tensor(rng.uniform(-bound, bound, size=(d, spec.bottleneck))))
        params.add(f"{PREFIX}{i}.up", Tensor(np.zeros((spec.bottleneck, d))))
        hooks[i] = _make_hook(i, spec)
    set_frozen(params, lambda name: not is_adapter_param(name))
    return Forward(fwd.spec, hooks)


def is_adapter_param(name: str) -> bool:
    return name.startswith(PREFIX)


def bind(fwd: Forward, spec: AdapterSpec) -> Forward:
    """Forward for a network whose adapter parameters already exist (e.g. loaded)."""
    points = spec.points(len(fwd.spec.hidden_dims))
    return Forward(fwd.spec, {**fwd.hooks, **{i: _make_hook(i, spec) for i in points}})
