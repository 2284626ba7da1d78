"""Teacher/student consistency measurements.

Everything here is read-only numpy in float64, independent of the autodiff
engine, so these numbers double as an oracle for the training path.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError
from .tensor import Tensor

HIST_BINS = 50
HIST_RANGE = (0.0, 50.0)


def _arr(z) -> np.ndarray:
    a = z.data if isinstance(z, Tensor) else z
    return np.asarray(a, dtype=np.float64)


def _rows(z) -> np.ndarray:
    a = _arr(z)
    return a[None, :] if a.ndim == 1 else a


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))


def sharpness(z) -> np.ndarray:
    """Per-sample logsumexp of the logits."""
    z = _rows(z)
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def _check_pair(z_t: np.ndarray, z_s: np.ndarray) -> None:
    if z_t.shape != z_s.shape:
        raise DimensionError(f"teacher logits {z_t.shape} and student logits {z_s.shape} differ")


def sharpness_gap(z_t, z_s) -> float:
    """Batch mean of sharpness(teacher) - sharpness(student)."""
    z_t, z_s = _rows(z_t), _rows(z_s)
    _check_pair(z_t, z_s)
    return float(np.mean(sharpness(z_t) - sharpness(z_s)))


def logit_second_moment(z) -> np.ndarray:
    """Per-sample (1/K) sum_j z_j^2, the raw (uncentered) logit variance."""
    return np.mean(_rows(z) ** 2, axis=1)


class GapApprox(NamedTuple):
    approx: float
    exact: float
    abs_error: float
    mean_abs_row_mean_t: float
    mean_abs_row_mean_s: float


def gap_variance_approx(z_t, z_s) -> GapApprox:
    """Second-order estimate log(1 + var_t/2) - log(1 + var_s/2) of the gap.

    The estimate assumes zero-mean logit rows; the mean |row mean| of both
    sides is reported alongside so callers can see how well that holds.
    """
    z_t, z_s = _rows(z_t), _rows(z_s)
    _check_pair(z_t, z_s)
    approx = float(np.mean(np.log1p(logit_second_moment(z_t) / 2) - np.log1p(logit_second_moment(z_s) / 2)))
    exact = sharpness_gap(z_t, z_s)
    return GapApprox(
        approx=approx,
        exact=exact,
        abs_error=abs(approx - exact),
        mean_abs_row_mean_t=float(np.mean(np.abs(z_t.mean(axis=1)))),
        mean_abs_row_mean_s=float(np.mean(np.abs(z_s.mean(axis=1)))),
    )


def kl_consistency(z_t, z_s, tau: float) -> float:
    """Batch-mean KL(p_t || p_s) at temperature ``tau``, without the tau^2 factor."""
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")
    z_t, z_s = _rows(z_t), _rows(z_s)
    _check_pair(z_t, z_s)
    log_pt, log_ps = _log_softmax(z_t / tau), _log_softmax(z_s / tau)
    return float(np.mean(np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=1)))


def linear_cka(x, y) -> float:
    """Linear CKA between two representations of the same n samples."""
    x, y = _arr(x), _arr(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"CKA needs matrices with equal row counts, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise DegenerateInputError("CKA needs at least two samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    norm_x = np.linalg.norm(xc.T @ xc)
    norm_y = np.linalg.norm(yc.T @ yc)
    if norm_x == 0 or norm_y == 0:
        raise DegenerateInputError("CKA is undefined for a representation with zero variance")
    return float(np.linalg.norm(yc.T @ xc) ** 2 / (norm_x * norm_y))


def safe_cka(x, y) -> float:
    """CKA, or NaN when it is undefined (used for logging)."""
    try:
        return linear_cka(x, y)
    except DegenerateInputError:
        return float("nan")


@dataclass
class LogitStats:
    sharpness: np.ndarray
    sharpness_mean: float
    sharpness_std: float
    logit_mean: float
    variance: np.ndarray
    variance_mean: float
    major_logit: np.ndarray


def logit_stats(z) -> LogitStats:
    z = _rows(z)
    s = sharpness(z)
    var = logit_second_moment(z)
    return LogitStats(
        sharpness=s,
        sharpness_mean=float(s.mean()),
        sharpness_std=float(s.std()),
        logit_mean=float(z.mean()),
        variance=var,
        variance_mean=float(var.mean()),
        major_logit=z.max(axis=1),
    )


def major_logit_histogram(z, bins: int = HIST_BINS, value_range: tuple[float, float] = HIST_RANGE) -> dict:
    """Histogram of each sample's largest logit over a fixed range.

    Values outside the range are counted in the edge bins so the counts always
    sum to the number of samples.
    """
    lo, hi = value_range
    major = np.clip(_rows(z).max(axis=1), lo, hi)
    counts, edges = np.histogram(major, bins=bins, range=(lo, hi))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


@dataclass
class ConsistencyReport:
    gap: float
    gap_approx: float
    gap_approx_abs_error: float
    mean_abs_row_mean_t: float
    mean_abs_row_mean_s: float
    kl: dict[str, float]
    cka_logits: float
    cka_penultimate: float
    sharpness_t: float
    sharpness_s: float
    variance_t: float
    variance_s: float

    def to_dict(self) -> dict:
        return asdict(self)


def consistency_report(z_t, z_s, pen_t, pen_s, taus: Sequence[float]) -> ConsistencyReport:
    g = gap_variance_approx(z_t, z_s)
    st, ss = logit_stats(z_t), logit_stats(z_s)
    return ConsistencyReport(
        gap=g.exact,
        gap_approx=g.approx,
        gap_approx_abs_error=g.abs_error,
        mean_abs_row_mean_t=g.mean_abs_row_mean_t,
        mean_abs_row_mean_s=g.mean_abs_row_mean_s,
        kl={f"tau={t:g}": kl_consistency(z_t, z_s, t) for t in taus},
        cka_logits=safe_cka(z_t, z_s),
        cka_penultimate=safe_cka(pen_t, pen_s),
        sharpness_t=st.sharpness_mean,
        sharpness_s=ss.sharpness_mean,
        variance_t=st.variance_mean,
        variance_s=ss.variance_mean,
    )


def _decimal(v) -> str:
    # Shortest round-trip digits, never in exponent form.
    return np.format_float_positional(float(v), unique=True, trim="0")


def export_penultimate(features, labels, path: str | os.PathLike) -> None:
    """Write ``label,f0,...,f{d-1}`` rows, one per sample."""
    feats = _arr(features)
    labels = np.asarray(labels)
    if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
        raise DimensionError(f"features {feats.shape} and labels {labels.shape} do not line up")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", *(f"f{i}" for i in range(feats.shape[1]))])
        for label, row in zip(labels, feats):
            writer.writerow([int(label), *(_decimal(v) for v in row)])
