"""Statistics computed from a simulation trace.

Everything here is a pure function of the trace records, so a report can be
rebuilt from a saved ``trace.jsonl`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .workload import measure_transmission


@dataclass(frozen=True)
class HostPowerModel:
    idle: float = 100.0
    peak: float = 250.0

    def __post_init__(self):
        if not self.peak >= self.idle >= 0:
            raise ValueError("host power needs peak >= idle >= 0")

    def power(self, u: float) -> float:
        return self.idle + (self.peak - self.idle) * min(max(u, 0.0), 1.0)


@dataclass(frozen=True)
class SwitchPowerModel:
    static: float = 66.0
    port: float = 1.0

    def __post_init__(self):
        if self.static < 0 or self.port < 0:
            raise ValueError("switch power coefficients must be >= 0")

    def power(self, active_ports: int) -> float:
        """A switch with no active port is treated as powered off."""
        return self.static + self.port * active_ports if active_ports > 0 else 0.0


def power_models(power: dict) -> tuple[HostPowerModel, SwitchPowerModel]:
    return (HostPowerModel(power["host_idle"], power["host_peak"]),
            SwitchPowerModel(power["switch_static"], power["switch_port"]))


def end_time(trace: Sequence[dict]) -> float:
    ends = [r["t"] for r in trace if r["kind"] == "END"]
    return ends[-1] if ends else max((r["t"] for r in trace), default=0.0)


def integrate_energy(
    trace: Sequence[dict],
    host_model: HostPowerModel,
    switch_model: SwitchPowerModel,
    start: float = 0.0,
    end: float | None = None,
) -> tuple[float, float]:
    """Host and switch energy in watt-hours over [start, end]."""
    if end is None:
        end = end_time(trace)
    states = [r for r in trace if r["kind"] == "STATE"]
    host_j = switch_j = 0.0
    for i, s in enumerate(states):
        a = max(s["t"], start)
        b = min(states[i + 1]["t"] if i + 1 < len(states) else end, end)
        if b <= a:
            continue
        host_j += (b - a) * sum(host_model.power(u) for u in s["hosts"].values())
        switch_j += (b - a) * sum(switch_model.power(n) for n in s["ports"].values())
    return host_j / 3600.0, switch_j / 3600.0


@dataclass
class TaskRow:
    task: str
    batch: str
    status: str  # done | failed
    instance: str
    src: str
    dst: str
    start: float | None
    end: float | None
    exe: float | None
    downtime: float | None
    transferred: float | None
    rounds: int | None
    capped: bool | None
    converged: bool | None
    deadline: float | None
    slack: float | None  # deadline minus completion time
    missed: bool
    reason: str


def task_rows(trace: Sequence[dict]) -> list[TaskRow]:
    horizon_end = end_time(trace)
    info = {r["task"]: r for r in trace if r["kind"] == "TASK"}
    rows = {}
    for r in trace:
        if r["kind"] == "MIG_POST":
            slack = None if r["deadline"] is None else r["deadline"] - r["t"]
            rows[r["task"]] = TaskRow(
                r["task"], r["batch"], "done", r["instance"], r["src"], r["dst"], r["start"], r["t"],
                r["exe"], r["downtime"], r["transferred"], r["rounds"], r["capped"], r["converged"],
                r["deadline"], slack, slack is not None and slack < 0, "",
            )
        elif r["kind"] == "FAIL" and r["task"] not in rows:
            i = info.get(r["task"], {})
            d = r.get("deadline")
            slack = None if d is None else d - horizon_end
            rows[r["task"]] = TaskRow(
                r["task"], r["batch"], "failed", i.get("instance", ""), i.get("src", ""), i.get("dst", ""),
                None, None, None, None, None, None, None, None, d, slack, True, r["reason"],
            )
    return [rows[k] for k in sorted(rows)]


def deadline_accounting(rows: Iterable[TaskRow]) -> tuple[int, list[float]]:
    """Miss count and remaining windows of deadline-bearing or failed tasks."""
    misses, windows = 0, []
    for r in rows:
        if r.slack is not None:
            windows.append(r.slack)
        if r.missed:
            misses += 1
    return misses, windows


def _mean(xs: list[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def total_migration_time(trace: Sequence[dict]) -> float:
    starts = [r["t"] for r in trace if r["kind"] == "MIG_PRE"]
    ends = [r["t"] for r in trace if r["kind"] == "MIG_POST"]
    if not ends:
        return 0.0
    return max(ends) - min(starts)


def summarize(trace: Sequence[dict], power: dict) -> dict:
    rows = task_rows(trace)
    done = [r for r in rows if r.status == "done"]
    misses, windows = deadline_accounting(rows)
    host_wh, switch_wh = integrate_energy(trace, *power_models(power))
    exe = [r.exe for r in done]
    down = [r.downtime for r in done]
    sent = [r.transferred for r in done]
    return {
        "tasks": len(rows),
        "completed": len(done),
        "failed": len(rows) - len(done),
        "total_migration_time": total_migration_time(trace),
        "avg_execution_time": _mean(exe),
        "max_execution_time": max(exe) if exe else None,
        "avg_downtime": _mean(down),
        "total_downtime": sum(down),
        "transferred_bits": sum(sent),
        "avg_transferred_bits": _mean(sent),
        "capped": sum(1 for r in done if r.capped),
        "deadline_tasks": len(windows),
        "deadline_misses": misses,
        "avg_remaining_window": _mean(windows),
        "avg_network_transmission_time": measure_transmission(trace),
        "requests": sum(1 for r in trace if r["kind"] == "REQUEST"),
        "host_energy_wh": host_wh,
        "switch_energy_wh": switch_wh,
        "end_time": end_time(trace),
    }


