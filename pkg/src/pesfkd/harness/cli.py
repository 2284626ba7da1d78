"""Command-line entry point.

Exit codes: 0 on success, 1 on usage errors (bad arguments), 2 on runtime
errors (bad files, incompatible checkpoints, failed runs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import Dataset, load_csv
from ..errors import PesfkdError
from .checkpoint import load_checkpoint
from .config import DistillConfig, config_from_dict, load_config
from .runner import compare, default_dataset, diagnose, distill, train_teacher

log = logging.getLogger("pesfkd")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SYNTHETIC = "synthetic"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dataset(spec: str | None, config: DistillConfig, num_classes: int | None = None) -> Dataset:
    if spec is None or spec == SYNTHETIC:
        return default_dataset(config)
    return load_csv(spec, num_classes if num_classes is not None else config.data.num_classes)


def _cmd_train_teacher(args) -> None:
    config = load_config(args.config)
    res = train_teacher(config, _dataset(args.data, config), out=args.out, metrics=args.metrics)
    final = res.records[-1] if res.records else {}
    log.info("teacher saved to %s (eval acc %.4f)", args.out, final.get("teacher_acc", float("nan")))


def _cmd_distill(args) -> None:
    config = load_config(args.config)
    res = distill(config, args.teacher, _dataset(args.data, config), out=args.out, metrics=args.metrics,
                  teacher_out=args.teacher_out)
    final = res.records[-1] if res.records else {}
    log.info("student saved to %s (eval acc %.4f, gap %.4f)", args.out,
             final.get("student_acc", float("nan")), final.get("gap", float("nan")))


def _cmd_diagnose(args) -> None:
    teacher = load_checkpoint(args.teacher)
    student = load_checkpoint(args.student)
    raw = student.config or teacher.config
    config = config_from_dict(raw) if raw else DistillConfig()
    dataset = _dataset(args.data, config, teacher.model.num_classes)
    result = diagnose(teacher, student, dataset, report=args.report, export=args.export)
    if args.report is None:
        print(json.dumps(result, sort_keys=True, indent=2))


def _cmd_compare(args) -> None:
    paths = [p for p in args.configs.split(",") if p]
    if len(paths) < 2:
        raise UsageError("--configs needs at least two comma-separated files")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    configs = [load_config(p) for p in paths]
    dataset = _dataset(args.data, configs[0])
    report = compare(configs, dataset, list(range(args.seeds)), args.out, jobs=args.jobs)
    for row in report["summary"]:
        log.info("%-16s acc %.4f  |gap| %.4f  trainable teacher %d / %d", row["config"], row["student_acc_mean"],
                 row["abs_gap_mean"], row["trainable_teacher_params"], row["total_teacher_params"])
    log.info("summary written to %s", Path(args.out) / "summary.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pesfkd", description="Teacher/student distillation experiments with adapter teachers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-teacher", help="pretrain a teacher on the task loss")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="teacher checkpoint path")
    p.add_argument("--data", default=SYNTHETIC, help="CSV path or 'synthetic' (default)")
    p.add_argument("--metrics", help="per-epoch CSV path")
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("distill", help="train a student from a pretrained teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True, help="pretrained teacher checkpoint")
    p.add_argument("--out", required=True, help="student checkpoint path")
    p.add_argument("--metrics", required=True, help="per-epoch CSV path")
    p.add_argument("--data", default=SYNTHETIC)
    p.add_argument("--teacher-out", help="where to save the final teacher (default <out stem>.teacher.ckpt)")
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("diagnose", help="one-shot consistency report between two checkpoints")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--data", default=SYNTHETIC)
    p.add_argument("--report", help="JSON report path (stdout when omitted)")
    p.add_argument("--export", help="penultimate CSV path (default <report>.penultimate.csv)")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("compare", help="run several configs over seeds and summarize")
    p.add_argument("--configs", required=True, help="comma-separated experiment JSON files")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..n-1 (default 5)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=SYNTHETIC)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"pesfkd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PesfkdError, OSError, ValueError) as exc:
        print(f"pesfkd {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
