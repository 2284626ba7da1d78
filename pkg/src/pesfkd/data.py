"""Seeded synthetic classification data, a CSV loader, splits and batching."""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, RangeError, SpecError
from .losses import one_hot
from .tensor import Tensor

TRAIN, EVAL = "train", "eval"


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    samples_per_class: int = 200
    dim: int = 2
    cluster_std: float = 1.0
    overlap: float = 0.0
    seed: int = 0
    # Spread of the class means before the overlap shrink.
    mean_scale: float = 4.0

    def __post_init__(self):
        if self.num_classes < 2 or self.samples_per_class < 1 or self.dim < 1:
            raise SpecError(f"counts and dims must be positive (num_classes >= 2): {self}")
        if not self.cluster_std > 0:
            raise SpecError(f"cluster_std must be > 0, got {self.cluster_std}")
        if not self.overlap >= 0:
            raise SpecError(f"overlap must be >= 0, got {self.overlap}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise RangeError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, tag: str) -> "Dataset":
        if self.split is None:
            raise SpecError("dataset has not been split")
        mask = self.split == tag
        return Dataset(self.features[mask], self.labels[mask], self.num_classes)


def generate(spec: SyntheticSpec) -> Dataset:
    """K Gaussian blobs; ``overlap`` pulls the class means towards the origin."""
    rng = np.random.default_rng(spec.seed)
    means = rng.uniform(-1.0, 1.0, size=(spec.num_classes, spec.dim)) * spec.mean_scale / (1.0 + spec.overlap)
    n = spec.samples_per_class
    feats = np.concatenate([m + spec.cluster_std * rng.standard_normal((n, spec.dim)) for m in means])
    labels = np.repeat(np.arange(spec.num_classes), n)
    return Dataset(feats, labels, spec.num_classes)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | os.PathLike, num_classes: int) -> Dataset:
    """Rows of ``label,x1,...,xd``; a non-numeric first cell marks a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r]
    if rows and not _is_number(rows[0][1][0].strip()):
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise ParseError(f"{path}:{rows[0][0]}: need a label and at least one feature")
    labels, feats = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
        try:
            label = int(row[0])
            values = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= label < num_classes:
            raise RangeError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
        labels.append(label)
        feats.append(values)
    return Dataset(np.array(feats), np.array(labels), num_classes)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Dataset:
    """Tag each sample train/eval with a seeded permutation."""
    if not 0 < train_fraction < 1:
        raise SpecError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    tags = np.full(len(ds), EVAL, dtype=object)
    tags[order[: int(round(train_fraction * len(ds)))]] = TRAIN
    return Dataset(ds.features, ds.labels, ds.num_classes, split=tags)


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Z-score every dataset with the train split's per-column statistics."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [Dataset((d.features - mu) / sd, d.labels, d.num_classes) for d in (train, *others)]


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> list[tuple[Tensor, Tensor]]:
    if batch_size < 1:
        raise SpecError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(ds))
    out = []
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        out.append((Tensor(ds.features[idx]), one_hot(ds.labels[idx], ds.num_classes)))
    return out
