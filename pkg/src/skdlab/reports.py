"""Structured-text (JSONL) and CSV writers for run logs and reports.

CSV conventions everywhere: UTF-8, LF, header row, '.' decimal separator,
absent values as empty fields. Run-log files are append-only records in step
order.
"""

from __future__ import annotations

import csv
import json

from .evaluation import EvalReport, SpeedupReport
from .training import RunLog

RUNLOG_COLUMNS = ("step", "loss", "lr", "acceptance_rate", "dev_loss", "task_metric")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_jsonl(records, path):
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def runlog_records(runlog: RunLog):
    """Chronological JSON records: eval rows appear after the step they follow."""
    evals = {e.step: e for e in runlog.evals}
    out = []

    def eval_rec(e):
        return {"type": "eval", "step": e.step, "dev_loss": e.dev_loss, "task_metric": e.task_metric}

    if 0 in evals:
        out.append(eval_rec(evals[0]))
    for s in runlog.steps:
        rec = {"type": "step", "step": s.step, "loss": s.loss, "lr": s.lr}
        if s.acceptance_rate is not None:
            rec["acceptance_rate"] = s.acceptance_rate
        if s.gt_fraction is not None:
            rec["gt_fraction"] = s.gt_fraction
        rec["sequences"] = s.sequences
        out.append(rec)
        if s.step in evals:
            out.append(eval_rec(evals[s.step]))
    return out


def write_runlog(runlog: RunLog, jsonl_path, csv_path):
    write_jsonl(runlog_records(runlog), jsonl_path)
    evals = {e.step: e for e in runlog.evals}
    rows = []
    if 0 in evals:
        rows.append((0, None, None, None, evals[0].dev_loss, evals[0].task_metric))
    for s in runlog.steps:
        e = evals.get(s.step)
        rows.append(
            (
                s.step,
                s.loss,
                s.lr,
                s.acceptance_rate,
                e.dev_loss if e else None,
                e.task_metric if e else None,
            )
        )
    write_csv(csv_path, RUNLOG_COLUMNS, rows)


def write_eval_reports(reports: list[EvalReport], csv_path, jsonl_path=None):
    header = ("task", "metric", "value", "n_examples", "decode_config")
    rows = [(r.task_tag, r.metric, r.value, r.n_examples, r.decode_config) for r in reports]
    write_csv(csv_path, header, rows)
    if jsonl_path is not None:
        write_jsonl([r.__dict__ for r in reports], jsonl_path)


def write_speedup_reports(rows: list[tuple[str, str, SpeedupReport]], csv_path):
    """Rows of (draft label, target label, report)."""
    header = (
        "draft",
        "target",
        "gamma",
        "acceptance_ratio",
        "tokens_per_target_call",
        "speedup_estimate",
        "n_trajectories",
    )
    out = [
        (d, t, r.gamma, r.acceptance_ratio, r.tokens_per_target_call, r.speedup_estimate, r.n_trajectories)
        for d, t, r in rows
    ]
    write_csv(csv_path, header, out)
