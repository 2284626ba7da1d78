"""Dense feed-forward classifiers with named, freezable parameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecError
from .tensor import Tensor

Hook = Callable[[Tensor, "ParameterSet"], Tensor]


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise SpecError(f"all layer widths must be positive: {self.input_dim}, {self.hidden_dims}")
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ("relu", "gelu"):
            raise SpecError(f"activation must be relu or gelu, got {self.activation!r}")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


class ParameterSet:
    """Ordered ``name -> Tensor`` map. A parameter is frozen when its tensor
    does not require grad, so freezing also keeps backward away from it."""

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, t in (items or {}).items():
            self.add(name, t)

    def add(self, name: str, tensor: Tensor, frozen: bool = False) -> Tensor:
        if name in self._params:
            raise SpecError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = not frozen
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_frozen(self, name: str) -> bool:
        return not self._params[name].requires_grad

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def subset(self, predicate: Callable[[str], bool]) -> "ParameterSet":
        """View sharing the same tensors; freeze flags are kept."""
        out = ParameterSet()
        for n, t in self._params.items():
            if predicate(n):
                out._params[n] = t
        return out

    @classmethod
    def union(cls, **groups: "ParameterSet") -> "ParameterSet":
        """Combine sets under ``<group>.`` prefixes, sharing tensors."""
        out = cls()
        for prefix, group in groups.items():
            for n, t in group.items():
                out._params[f"{prefix}.{n}"] = t
        return out


def set_frozen(params: ParameterSet, predicate: Callable[[str], bool]) -> None:
    """Freeze every parameter whose name satisfies ``predicate``; unfreeze the rest."""
    for name, t in params.items():
        frozen = bool(predicate(name))
        if frozen:
            t.grad = None
        t.requires_grad = not frozen


def count_params(params: ParameterSet, only_trainable: bool = False) -> int:
    return sum(t.size for n, t in params.items() if not (only_trainable and params.is_frozen(n)))


@dataclass
class ForwardTrace:
    logits: Tensor
    penultimate: Tensor
    hidden: list[Tensor] = field(default_factory=list)


def init_params(spec: ModelSpec) -> ParameterSet:
    rng = np.random.default_rng(spec.init_seed)
    params = ParameterSet()
    widths = spec.widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        params.add(f"layer{i}.weight", Tensor(w))
        params.add(f"layer{i}.bias", Tensor(b))
    return params


def forward(params: ParameterSet, x: Tensor, spec: ModelSpec, hooks: Mapping[int, Hook] | None = None) -> ForwardTrace:
    """Evaluate the network; ``hooks[i]`` rewrites hidden activation ``i``."""
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input_dim {spec.input_dim}")
    act = T.activation(spec.activation)
    hooks = hooks or {}
    h = x
    hidden = []
    n_hidden = len(spec.hidden_dims)
    for i in range(n_hidden):
        h = act(_dense(params, i, h))
        if i in hooks:
            h = hooks[i](h, params)
        hidden.append(h)
    logits = _dense(params, n_hidden, h)
    return ForwardTrace(logits=logits, penultimate=h, hidden=hidden)


def _dense(params: ParameterSet, i: int, h: Tensor) -> Tensor:
    w, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
    z = h @ w
    return z + T.expand(b, z.shape)


@dataclass
class Forward:
    """Callable ``(params, x) -> ForwardTrace`` bound to a spec and its hooks."""

    spec: ModelSpec
    hooks: dict[int, Hook] = field(default_factory=dict)

    def __call__(self, params: ParameterSet, x: Tensor) -> ForwardTrace:
        return forward(params, x, self.spec, self.hooks)


def build(spec: ModelSpec) -> tuple[ParameterSet, Forward]:
    return init_params(spec), Forward(spec)
