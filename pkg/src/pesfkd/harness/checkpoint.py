"""Checkpoint files: one JSON manifest line, then a raw little-endian payload.

The manifest lists every parameter (name, shape, frozen flag) in payload order
together with the precision, model/adapter specs and the config that produced
it, so a load reproduces each array bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..adapters import AdapterSpec, bind
from ..errors import CompatibilityError, ParseError
from ..nn import Forward, ModelSpec, ParameterSet
from ..tensor import Tensor

FORMAT = "pesfkd-checkpoint"
VERSION = 1
_WIRE = {"f32": "<f4", "f64": "<f8"}


@dataclass
class Checkpoint:
    model: ModelSpec
    params: ParameterSet
    adapter: AdapterSpec | None = None
    config: dict | None = None
    config_hash: str = ""
    role: str = "teacher"

    @property
    def precision(self) -> str:
        dtypes = {t.dtype for _, t in self.params.items()}
        return "f64" if np.dtype(np.float64) in dtypes else "f32"

    def forward(self) -> Forward:
        fwd = Forward(self.model)
        return bind(fwd, self.adapter) if self.adapter is not None else fwd


def _manifest(ckpt: Checkpoint) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "role": ckpt.role,
        "precision": ckpt.precision,
        "model": ckpt.model.to_dict(),
        "adapter": ckpt.adapter.to_dict() if ckpt.adapter is not None else None,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "params": [
            {"name": n, "shape": list(t.shape), "frozen": ckpt.params.is_frozen(n)} for n, t in ckpt.params.items()
        ],
    }


def payload_bytes(params: ParameterSet, precision: str, predicate: Callable[[str], bool] = lambda n: True) -> bytes:
    wire = _WIRE[precision]
    return b"".join(t.data.astype(wire, copy=False).tobytes(order="C") for n, t in params.items() if predicate(n))


def payload_sha256(params: ParameterSet, predicate: Callable[[str], bool] = lambda n: True) -> str:
    prec = "f64" if any(t.dtype == np.float64 for _, t in params.items()) else "f32"
    return hashlib.sha256(payload_bytes(params, prec, predicate)).hexdigest()


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    manifest = json.dumps(_manifest(ckpt), sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(manifest.encode("utf-8") + b"\n")
        fh.write(payload_bytes(ckpt.params, ckpt.precision))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise ParseError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad manifest ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise ParseError(f"{path}: not a {FORMAT} file")
    wire = np.dtype(_WIRE[manifest["precision"]])
    native = np.float32 if manifest["precision"] == "f32" else np.float64
    expected = sum(int(np.prod(p["shape"])) for p in manifest["params"]) * wire.itemsize
    if len(payload) != expected:
        raise ParseError(f"{path}: payload has {len(payload)} bytes, manifest describes {expected}")

    params = ParameterSet()
    offset = 0
    for p in manifest["params"]:
        count = int(np.prod(p["shape"]))
        arr = np.frombuffer(payload, dtype=wire, count=count, offset=offset).reshape(p["shape"])
        offset += count * wire.itemsize
        params.add(p["name"], Tensor(arr, dtype=native), frozen=p["frozen"])
    model = manifest["model"]
    adapter = manifest["adapter"]
    return Checkpoint(
        model=ModelSpec(**{**model, "hidden_dims": tuple(model["hidden_dims"])}),
        params=params,
        adapter=AdapterSpec(**adapter) if adapter is not None else None,
        config=manifest["config"],
        config_hash=manifest["config_hash"],
        role=manifest["role"],
    )


def check_compatible(model: ModelSpec, expected: ModelSpec, what: str = "checkpoint") -> None:
    """Raise CompatibilityError naming every architectural field that differs."""
    diffs = [
        f"{name}: {getattr(model, name)!r} != {getattr(expected, name)!r}"
        for name in ("input_dim", "hidden_dims", "num_classes", "activation")
        if getattr(model, name) != getattr(expected, name)
    ]
    if diffs:
        raise CompatibilityError(f"{what} is incompatible: " + "; ".join(diffs), [d.split(":")[0] for d in diffs])
