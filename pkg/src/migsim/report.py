"""Writing run results to disk.

Per run: ``summary.json``, ``tasks.csv`` and, on request, ``trace.jsonl``.
Planner wall-clock time varies between runs, so it goes to ``timing.json``
and never into the reproducible files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from pathlib import Path
from typing import Sequence

from .metrics import TaskRow
from .runner import RunResult

TASK_COLUMNS = [f.name for f in dataclasses.fields(TaskRow)]


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def tasks_csv(result: RunResult) -> str:
    rows = [[getattr(r, c) for c in TASK_COLUMNS] for r in result.rows()]
    return _csv(TASK_COLUMNS, rows)


def trace_jsonl(trace: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace)


def read_trace(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _prepare(out_dir: str | Path) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_run(result: RunResult, out_dir: str | Path, trace: bool = False) -> list[Path]:
    p = _prepare(out_dir)
    files = {
        "summary.json": _dumps(result.summary()),
        "tasks.csv": tasks_csv(result),
        "timing.json": _dumps({"planner_runtime": result.planner_runtime}),
    }
    if trace:
        files["trace.jsonl"] = trace_jsonl(result.trace)
    written = []
    for name, text in files.items():
        (p / name).write_text(text)
        written.append(p / name)
    return written


def comparison_csv(results: Sequence[RunResult]) -> str:
    summaries = [r.summary() for r in results]
    columns = ["algorithm"] + sorted({k for s in summaries for k in s} - {"algorithm"})
    return _csv(columns, [[s.get(c) for c in columns] for s in summaries])


def write_comparison(results: Sequence[RunResult], out_dir: str | Path, trace: bool = False) -> list[Path]:
    p = _prepare(out_dir)
    written = []
    for r in results:
        written += write_run(r, p / r.algorithm.replace(":", "_"), trace)
    (p / "comparison.csv").write_text(comparison_csv(results))
    written.append(p / "comparison.csv")
    return written
