"""Experiment engine: teacher pretraining, the three distillation regimes,
multi-seed comparison and one-shot diagnostics."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import diagnostics as D
from .. import losses as L
from .. import tensor as T
from ..adapters import attach
from ..errors import CompatibilityError
from ..data import Dataset, batches, generate, split, standardize
from ..nn import Forward, ParameterSet, build, count_params, set_frozen
from ..tensor import Tensor, no_grad
from .checkpoint import Checkpoint, check_compatible, load_checkpoint, save_checkpoint
from .config import (STREAM_ADAPTER_INIT, STREAM_SHUFFLE, STREAM_STUDENT_INIT, STREAM_TEACHER_INIT, DistillConfig,
                     config_from_dict, derive_seed)
from .optim import SGD, lr_schedule

METRICS_HEADER = (
    "epoch", "student_task_loss", "student_kl_loss", "teacher_task_loss", "teacher_acc", "student_acc",
    "sharp_t", "sharp_s", "gap", "gap_approx", "kl_t1", "kl_ttrain", "cka_logits", "cka_penult",
    "trainable_t", "trainable_s",
)
TEACHER_METRICS_HEADER = ("epoch", "teacher_task_loss", "teacher_acc", "sharp_t", "trainable_t")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


class MetricsWriter:
    """CSV writer that flushes after every row so partial runs stay readable."""

    def __init__(self, path: str | os.PathLike | None, header: Sequence[str]):
        self.header = tuple(header)
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._fh.write(",".join(self.header) + "\n")
            self._fh.flush()

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        self._fh.write(",".join(_fmt(record[k]) for k in self.header) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def prepare_data(dataset: Dataset, config: DistillConfig) -> tuple[Dataset, Dataset]:
    """Seeded train/eval split, then optional train-statistics standardization."""
    tagged = split(dataset, config.data.train_fraction, config.data.seed)
    train, evaluation = tagged.subset("train"), tagged.subset("eval")
    if config.data.standardize:
        train, evaluation = standardize(train, evaluation)
    return train, evaluation


def default_dataset(config: DistillConfig) -> Dataset:
    return generate(config.data.synthetic())


def _predict(fwd: Forward, params: ParameterSet, ds: Dataset):
    with no_grad():
        return fwd(params, Tensor(ds.features))


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# -- teacher pretraining ------------------------------------------------------

@dataclass
class TeacherResult:
    checkpoint: Checkpoint
    records: list[dict]


def train_teacher(config: DistillConfig, dataset: Dataset, out: str | os.PathLike | None = None,
                  metrics: str | os.PathLike | None = None) -> TeacherResult:
    """Train the teacher on the task loss alone."""
    with T.precision(config.precision):
        train, evaluation = prepare_data(dataset, config)
        spec = config.teacher.spec(train.dim, train.num_classes, derive_seed(config.seed, STREAM_TEACHER_INIT))
        params, fwd = build(spec)
        opt = SGD(params, config.momentum, config.weight_decay)
        shuffle = derive_seed(config.seed, STREAM_SHUFFLE)
        writer = MetricsWriter(metrics, TEACHER_METRICS_HEADER)
        records = []
        try:
            for epoch in range(config.pretrain_epochs):
                lr = lr_schedule(config.lr, epoch, config.milestones, config.lr_decay)
                total, n = 0.0, 0
                for x, y in batches(train, config.batch_size, shuffle, epoch):
                    loss = L.cross_entropy(y, L.tempered_softmax(fwd(params, x).logits, 1.0))
                    loss.backward()
                    opt.step(lr)
                    total += loss.item()
                    n += 1
                z = _predict(fwd, params, evaluation).logits.data
                rec = {
                    "epoch": epoch + 1,
                    "teacher_task_loss": total / max(n, 1),
                    "teacher_acc": _accuracy(z, evaluation.labels),
                    "sharp_t": float(D.sharpness(z).mean()),
                    "trainable_t": count_params(params, only_trainable=True),
                }
                records.append(rec)
                writer.write(rec)
        finally:
            writer.close()
        ckpt = Checkpoint(spec, params, None, config.to_dict(), config.hash(), role="teacher")
        if out is not None:
            save_checkpoint(out, ckpt)
        return TeacherResult(ckpt, records)


# -- distillation ---------------------------------------------------------------

@dataclass
class DistillResult:
    student: Checkpoint
    teacher: Checkpoint
    records: list[dict]
    teacher_params_total: int
    teacher_params_trainable: int
    student_params: int


def _teacher_for_regime(ckpt: Checkpoint, config: DistillConfig) -> tuple[ParameterSet, Forward, Checkpoint]:
    params = ParameterSet()
    dtype = T.default_dtype()
    for name, t in ckpt.params.items():
        params.add(name, Tensor(t.data, dtype=dtype))
    fwd = ckpt.forward()
    adapter = ckpt.adapter
    if config.regime == "vanilla":
        set_frozen(params, lambda n: True)
    elif config.regime == "finetune":
        set_frozen(params, lambda n: False)
    else:
        if ckpt.adapter is not None:
            raise ValueError("adapter regime expects a teacher checkpoint without adapters")
        fwd = attach(params, fwd, config.adapter, seed=derive_seed(config.seed, STREAM_ADAPTER_INIT))
        adapter = config.adapter
    out = Checkpoint(ckpt.model, params, adapter, config.to_dict(), config.hash(), role="teacher")
    return params, fwd, out


def evaluate_pair(t_fwd: Forward, t_params: ParameterSet, s_fwd: Forward, s_params: ParameterSet,
                  evaluation: Dataset, tau: float) -> dict:
    tt = _predict(t_fwd, t_params, evaluation)
    st = _predict(s_fwd, s_params, evaluation)
    z_t, z_s = tt.logits.data, st.logits.data
    g = D.gap_variance_approx(z_t, z_s)
    return {
        "teacher_acc": _accuracy(z_t, evaluation.labels),
        "student_acc": _accuracy(z_s, evaluation.labels),
        "sharp_t": float(D.sharpness(z_t).mean()),
        "sharp_s": float(D.sharpness(z_s).mean()),
        "gap": g.exact,
        "gap_approx": g.approx,
        "kl_t1": D.kl_consistency(z_t, z_s, 1.0),
        "kl_ttrain": D.kl_consistency(z_t, z_s, tau),
        "cka_logits": D.safe_cka(z_t, z_s),
        "cka_penult": D.safe_cka(tt.penultimate.data, st.penultimate.data),
    }


def distill(config: DistillConfig, teacher: Checkpoint | str | os.PathLike, dataset: Dataset,
            out: str | os.PathLike | None = None, metrics: str | os.PathLike | None = None,
            teacher_out: str | os.PathLike | None = None) -> DistillResult:
    """Jointly train student (and, per regime, teacher) from a pretrained teacher.

    Each step shares one forward pass of both networks, updates the student on
    its combined loss, then the teacher on its own loss (not in vanilla).
    """
    ckpt = teacher if isinstance(teacher, Checkpoint) else load_checkpoint(teacher)
    with T.precision(config.precision):
        train, evaluation = prepare_data(dataset, config)
        expected = config.teacher.spec(train.dim, train.num_classes, ckpt.model.init_seed)
        check_compatible(ckpt.model, expected, "teacher checkpoint")

        t_params, t_fwd, t_ckpt = _teacher_for_regime(ckpt, config)
        s_spec = config.student.spec(train.dim, train.num_classes, derive_seed(config.seed, STREAM_STUDENT_INIT))
        s_params, s_fwd = build(s_spec)

        s_opt = SGD(s_params, config.momentum, config.weight_decay)
        t_opt = SGD(t_params, config.teacher_momentum, config.teacher_weight_decay)
        update_teacher = config.regime != "vanilla"
        w, tau, feedback = config.weights, config.tau, config.use_feedback
        shuffle = derive_seed(config.seed, STREAM_SHUFFLE)
        trainable_t = count_params(t_params, only_trainable=True)
        trainable_s = count_params(s_params, only_trainable=True)

        writer = MetricsWriter(metrics, METRICS_HEADER)
        records = []
        try:
            for epoch in range(config.epochs):
                s_lr = lr_schedule(config.lr, epoch, config.milestones, config.lr_decay)
                t_lr = lr_schedule(config.effective_teacher_lr, epoch, config.milestones, config.lr_decay)
                sums = np.zeros(3)
                n = 0
                for x, y in batches(train, config.batch_size, shuffle, epoch):
                    z_t = t_fwd(t_params, x).logits
                    z_s = s_fwd(s_params, x).logits
                    s_terms = L.student_loss_terms(z_s, z_t, y, w, tau)
                    if update_teacher:
                        t_terms = L.teacher_loss_terms(z_t, z_s, y, w, tau, feedback)
                        t_task = t_terms.task.item()
                    else:
                        with no_grad():
                            t_task = L.cross_entropy(y, L.tempered_softmax(z_t, 1.0)).item()
                    s_terms.total.backward()
                    s_opt.step(s_lr)
                    if update_teacher:
                        t_terms.total.backward()
                        t_opt.step(t_lr)
                    sums += (s_terms.task.item(), s_terms.kl.item(), t_task)
                    n += 1
                sums /= max(n, 1)
                rec = {"epoch": epoch + 1, "student_task_loss": sums[0], "student_kl_loss": sums[1],
                       "teacher_task_loss": sums[2]}
                rec.update(evaluate_pair(t_fwd, t_params, s_fwd, s_params, evaluation, tau))
                rec.update(trainable_t=trainable_t, trainable_s=trainable_s)
                records.append(rec)
                writer.write(rec)
        finally:
            writer.close()

        s_ckpt = Checkpoint(s_spec, s_params, None, config.to_dict(), config.hash(), role="student")
        if out is not None:
            save_checkpoint(out, s_ckpt)
            save_checkpoint(teacher_out or default_teacher_out(out), t_ckpt)
        elif teacher_out is not None:
            save_checkpoint(teacher_out, t_ckpt)
        return DistillResult(
            student=s_ckpt,
            teacher=t_ckpt,
            records=records,
            teacher_params_total=count_params(t_params),
            teacher_params_trainable=trainable_t,
            student_params=trainable_s,
        )


def default_teacher_out(out: str | os.PathLike) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".teacher" + (p.suffix or ".ckpt"))


# -- diagnostics -------------------------------------------------------------------

def diagnose(teacher: Checkpoint | str | os.PathLike, student: Checkpoint | str | os.PathLike, dataset: Dataset,
             report: str | os.PathLike | None = None, export: str | os.PathLike | None = None) -> dict:
    """One-shot consistency report between two checkpoints on the eval split."""
    t_ckpt = teacher if isinstance(teacher, Checkpoint) else load_checkpoint(teacher)
    s_ckpt = student if isinstance(student, Checkpoint) else load_checkpoint(student)
    config = _config_of(s_ckpt) or _config_of(t_ckpt) or DistillConfig()
    train, evaluation = prepare_data(dataset, config)
    for ck, what in ((t_ckpt, "teacher"), (s_ckpt, "student")):
        if ck.model.input_dim != evaluation.dim or ck.model.num_classes != evaluation.num_classes:
            fields = [f for f, a, b in (("input_dim", ck.model.input_dim, evaluation.dim),
                                        ("num_classes", ck.model.num_classes, evaluation.num_classes)) if a != b]
            raise CompatibilityError(f"{what} checkpoint does not match the data: differing {fields}", fields)

    with T.precision(t_ckpt.precision):
        tt = _predict(t_ckpt.forward(), t_ckpt.params, evaluation)
    with T.precision(s_ckpt.precision):
        st = _predict(s_ckpt.forward(), s_ckpt.params, evaluation)
    z_t, z_s = tt.logits.data, st.logits.data
    taus = sorted({1.0, float(config.tau)})
    cr = D.consistency_report(z_t, z_s, tt.penultimate.data, st.penultimate.data, taus)
    result = {
        **cr.to_dict(),
        "n_samples": len(evaluation),
        "teacher_acc": _accuracy(z_t, evaluation.labels),
        "student_acc": _accuracy(z_s, evaluation.labels),
        "major_logit_histogram": {"teacher": D.major_logit_histogram(z_t), "student": D.major_logit_histogram(z_s)},
    }
    if report is not None:
        with open(report, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(result, sort_keys=True, indent=2) + "\n")
        if export is None:
            export = Path(report).with_suffix(".penultimate.csv")
    if export is not None:
        D.export_penultimate(st.penultimate.data, evaluation.labels, export)
    return result


def _config_of(ckpt: Checkpoint) -> DistillConfig | None:
    if not ckpt.config:
        return None
    return config_from_dict(ckpt.config)


# -- comparison ---------------------------------------------------------------------

SUMMARY_METRICS = ("student_acc", "teacher_acc", "gap", "abs_gap", "gap_approx", "kl_t1", "kl_ttrain",
                   "cka_logits", "cka_penult")


@dataclass
class RunSummary:
    config: str
    seed: int
    final: dict
    teacher_params_total: int
    teacher_params_trainable: int
    student_params: int
    wall_clock_s: float = field(default=0.0, compare=False)


def _pretrain_task(args):
    config, dataset, path = args
    train_teacher(config, dataset, out=path)
    return path


def _distill_task(args):
    config, teacher_path, dataset, run_dir = args
    start = time.perf_counter()
    stem = f"{config.name}__seed{config.seed}"
    res = distill(config, teacher_path, dataset, out=Path(run_dir) / f"{stem}.ckpt",
                  metrics=Path(run_dir) / f"{stem}.csv")
    final = dict(res.records[-1]) if res.records else {}
    if final:
        final["abs_gap"] = abs(final["gap"])
    return RunSummary(config.name, config.seed, final, res.teacher_params_total, res.teacher_params_trainable,
                      res.student_params, time.perf_counter() - start)


def _map(fn, tasks: list, jobs: int) -> Iterable:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def compare(configs: Sequence[DistillConfig], dataset: Dataset, seeds: Sequence[int], out_dir: str | os.PathLike,
            jobs: int = 1) -> dict:
    """Run every (config, seed), then write summary.csv and report.json.

    Teachers are pretrained once per distinct pretraining setup and seed, so the
    regimes compared under one seed start from the same teacher. Results are
    merged in (config, seed) declaration order whatever ``jobs`` is.
    """
    if len(configs) < 2:
        raise ValueError("compare needs at least two configs")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ValueError(f"config names must be unique, got {names}")
    out = Path(out_dir)
    (out / "teachers").mkdir(parents=True, exist_ok=True)
    (out / "runs").mkdir(parents=True, exist_ok=True)

    pretrain: dict[str, tuple] = {}
    plan = []
    for cfg in configs:
        for seed in seeds:
            run_cfg = cfg.with_seed(seed)
            key = run_cfg.pretrain_key()
            path = out / "teachers" / f"teacher_seed{seed}_{key[:12]}.ckpt"
            pretrain.setdefault(key, (run_cfg, dataset, str(path)))
            plan.append((run_cfg, str(path), dataset, str(out / "runs")))

    runs: list[RunSummary] = []
    try:
        _map(_pretrain_task, list(pretrain.values()), jobs)
        runs = list(_map(_distill_task, plan, jobs))
    except Exception as exc:
        _write_report(out, configs, seeds, runs, note=f"aborted: {type(exc).__name__}: {exc}")
        raise
    return _write_report(out, configs, seeds, runs)


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def _write_report(out: Path, configs: Sequence[DistillConfig], seeds: Sequence[int], runs: list[RunSummary],
                  note: str | None = None) -> dict:
    rows = []
    for cfg in configs:
        mine = [r for r in runs if r.config == cfg.name]
        row = {"config": cfg.name, "regime": cfg.regime, "adapter_kind": cfg.adapter.kind if cfg.regime == "adapter"
               else "", "n_runs": len(mine)}
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = _aggregate([r.final[m] for r in mine if m in r.final])
        row["trainable_teacher_params"] = mine[0].teacher_params_trainable if mine else 0
        row["total_teacher_params"] = mine[0].teacher_params_total if mine else 0
        row["student_params"] = mine[0].student_params if mine else 0
        rows.append(row)

    header = list(rows[0].keys())
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row.values()])

    report = {
        "seeds": list(seeds),
        "configs": {c.name: c.to_dict() for c in configs},
        "summary": rows,
        "runs": [{k: v for k, v in dataclasses.asdict(r).items() if k != "wall_clock_s"} for r in runs],
        "complete": note is None,
    }
    if note is not None:
        report["note"] = note
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True, indent=2, allow_nan=True) + "\n")
    # Wall-clock is hardware dependent; kept apart so the files above stay reproducible.
    with open(out / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"non_normative": True, "wall_clock_s": {f"{r.config}__seed{r.seed}": r.wall_clock_s
                                                           for r in runs}}, fh, indent=2, sort_keys=True)
    return report
