"""Discrete-event fluid simulation of concurrent pre-copy migrations.

Every migration round is a set of subflows, one per admissible path.  Rates
are piecewise constant and recomputed whenever a flow starts or finishes;
a subflow's finish event is rescheduled whenever its rate changes.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .migmodel import StepProfile
from .netgraph import LinkKey, Network, links_of
from .planner import (
    Estimator,
    MigrationPlan,
    MigrationTask,
    PlanConfig,
    assign_deadlines,
    is_independent,
    replan,
)

# same-timestamp order: completions, then scheduling, then starts
PRIORITY = {
    "SUBFLOW_COMPLETE": 0,
    "PACKET_COMPLETE": 1,
    "VM_RESUME": 2,
    "MIG_POST": 3,
    "ARRIVAL": 4,
    "MIG_SCHEDULER": 5,
    "TIMED_START": 6,
    "MIG_PRE": 7,
    "MIG_START": 8,
    "VM_PAUSE": 9,
}
EVENT_KINDS = tuple(PRIORITY)


class SimulationError(RuntimeError):
    pass


@dataclass
class Flow:
    key: tuple
    links: list
    remaining: float = 0.0
    rate: float = 0.0
    version: int = 0


@dataclass
class MemberRun:
    """One VM's migration inside a (possibly merged) task."""

    task: MigrationTask
    batch: str
    paths: list = field(default_factory=list)
    round: int = 0
    round_start: float = 0.0
    stop_copy: bool = False
    volumes: list = field(default_factory=list)
    durations: list = field(default_factory=list)
    flows: dict = field(default_factory=dict)
    t_pre: float = math.nan
    t_start: float = math.nan
    stop_start: float = math.nan
    stop_end: float = math.nan
    done: bool = False
    capped: bool = False
    converged: bool = True
    next_volume: float = 0.0
    resume_done: bool = False


@dataclass
class TaskRun:
    task: MigrationTask
    state: str = "pending"  # pending | active | done | failed
    members: list = field(default_factory=list)


class Simulation:
    def __init__(
        self,
        network: Network,
        tasks: Sequence[MigrationTask],
        scheduler: "Scheduler",
        config: PlanConfig | None = None,
        group_deadlines: dict | None = None,
        horizon: float = 3600.0,
        watch_vlinks: Sequence[str] = (),
    ):
        self.net = network
        self.cfg = config or PlanConfig(horizon=horizon)
        self.group_deadlines = group_deadlines or {}
        self.horizon = horizon
        self.scheduler = scheduler
        self.now = 0.0
        self._seq = itertools.count()
        self._queue: list = []
        self.trace: list[dict] = []
        self.runs: dict[str, TaskRun] = {}
        self.active: dict[str, TaskRun] = {}
        self.out_busy: dict[str, str] = {}
        self.in_busy: dict[str, str] = {}
        self.flows: dict[tuple, Flow] = {}
        self.members: dict[str, MemberRun] = {}
        self.closed: set[str] = set()
        self._last_update = 0.0
        self.planner_runtime = 0.0
        self.arrivals = sorted({t.arrival for t in tasks if t.arrival > 0})
        self.watch = sorted(watch_vlinks)
        self._vlink_rates: dict[str, float] = {}
        self.vlink_timeline: dict[str, list[tuple[float, float]]] = {v: [] for v in self.watch}
        self.pauses: dict[str, list[list[float]]] = {}
        self._state_key = None
        est = Estimator(self.net, self.cfg)
        assign_deadlines(list(tasks), self.group_deadlines, est, 0.0)
        self.all_tasks = list(tasks)
        self.waiting = [t for t in tasks if t.arrival > 0]
        initial = [t for t in tasks if t.arrival <= 0]
        for t in tasks:
            self.record(0.0, "TASK", t.id, instance=t.instance, src=t.source, dst=t.dest,
                        deadline=t.deadline, arrival=t.arrival)
        for a in self.arrivals:
            self.push(a, "ARRIVAL", None)
        self.scheduler.bind(self)
        self.scheduler.admit(initial)
        self.push(0.0, "MIG_SCHEDULER", None)

    # event plumbing

    def push(self, t: float, kind: str, payload, version: int = 0) -> None:
        if t < self.now - 1e-12:
            raise SimulationError(f"{kind} scheduled into the past ({t} < {self.now})")
        heapq.heappush(self._queue, (t, PRIORITY[kind], next(self._seq), kind, payload, version))

    def record(self, t: float, kind: str, task, **fields) -> None:
        rec = {"t": t, "kind": kind}
        if task is not None:
            rec["task"] = task
        rec.update(fields)
        self.trace.append(rec)

    def run(self) -> "Simulation":
        while self._queue:
            t, _, _, kind, payload, version = heapq.heappop(self._queue)
            if kind == "SUBFLOW_COMPLETE":
                flow = self.flows.get(payload)
                if flow is None or flow.version != version:
                    continue
            if t < self.now:
                raise SimulationError("clock moved backwards")
            self.now = t
            getattr(self, "_on_" + kind.lower())(payload)
            if not self._queue or self._queue[0][0] > self.now:
                # sample once per timestamp so zero-length states never show
                self._watch_services()
                self._sample_state()
        self._finish()
        return self

    # flow accounting

    def _advance(self) -> None:
        dt = self.now - self._last_update
        if dt > 0:
            for f in self.flows.values():
                if f.rate > 0 and math.isfinite(f.rate):
                    f.remaining = max(0.0, f.remaining - f.rate * dt)
        self._last_update = self.now

    def _flow_resources(self) -> dict:
        return {k: f.links for k, f in self.flows.items()}

    def _reallocate(self) -> None:
        self._advance()
        rates = self.net.allocate(self._flow_resources())
        for k, f in self.flows.items():
            r = rates[k]
            if r != f.rate or f.version == 0:
                f.rate = r
                f.version += 1
                if r > 0:
                    eta = self.now + f.remaining / r
                    self.push(eta, "SUBFLOW_COMPLETE", k, f.version)

    def _watch_services(self) -> None:
        if not self.watch:
            return
        rates = self.net.service_rates(self._flow_resources(), only=self.watch)
        for vid in self.watch:
            r = rates[vid]
            if self._vlink_rates.get(vid) != r:
                self._vlink_rates[vid] = r
                self.vlink_timeline[vid].append((self.now, r))
                self.record(self.now, "VLINK", None, vlink=vid, rate=r)

    def _sample_state(self) -> None:
        links = [e for f in self.flows.values() for e in f.links]
        hosts = self.net.host_utilization()
        ports = self.net.active_ports(links)
        key = (tuple(hosts.items()), tuple(ports.items()))
        if key != self._state_key:
            self._state_key = key
            self.record(self.now, "STATE", None, hosts=hosts, ports=ports)

    def member_resources(self, m: MigrationTask, paths) -> list[list]:
        extra = self.net.topo.interface_keys(m.source, m.dest)
        return [links_of(p) + extra for p in paths]

    def probe_rates(self, task: MigrationTask) -> list[float]:
        """Rate each part of ``task`` would get if it started now."""
        flows = self._flow_resources()
        keys = []
        for i, part in enumerate(task.parts):
            paths = self.net.topo.k_paths(part.source, part.dest, self.cfg.k_paths)
            for j, res in enumerate(self.member_resources(part, paths)):
                flows[("probe", i, j)] = res
                keys.append((i, ("probe", i, j)))
        rates = self.net.allocate(flows)
        out = [0.0] * len(task.parts)
        for i, k in keys:
            out[i] += rates[k]
        return out

    # scheduler-facing API

    def interfaces_free(self, task: MigrationTask) -> bool:
        return task.source not in self.out_busy and task.dest not in self.in_busy

    def start(self, task: MigrationTask) -> None:
        """Begin pre-migration for ``task`` (MIG_PRE at the current time)."""
        run = self.runs.get(task.id)
        if run is None:
            run = self.runs[task.id] = TaskRun(task)
        if run.state != "pending":
            raise SimulationError(f"task {task.id} started twice")
        if not self.interfaces_free(task):
            raise SimulationError(f"task {task.id} would share a host interface")
        run.state = "active"
        self.active[task.id] = run
        self.out_busy[task.source] = task.id
        self.in_busy[task.dest] = task.id
        self.push(self.now, "MIG_PRE", task.id)

    def fail(self, task: MigrationTask, reason: str) -> None:
        run = self.runs.setdefault(task.id, TaskRun(task))
        run.state = "failed"
        for part in task.parts:
            self.closed.add(part.id)
            self.record(self.now, "FAIL", part.id, batch=task.id, reason=reason, deadline=part.deadline)

    def has_future_arrivals(self) -> bool:
        return bool(self.waiting)

    # handlers

    def _on_mig_scheduler(self, _payload) -> None:
        self.record(self.now, "MIG_SCHEDULER", None, active=len(self.active))
        self.scheduler.schedule()

    def _on_arrival(self, _payload) -> None:
        new = [t for t in self.waiting if t.arrival <= self.now + 1e-12]
        self.waiting = [t for t in self.waiting if t.arrival > self.now + 1e-12]
        for t in new:
            self.record(self.now, "ARRIVAL", t.id)
        est = Estimator(self.net, self.cfg)
        assign_deadlines(new, self.group_deadlines, est, self.now)
        self.scheduler.admit(new)
        self.scheduler.schedule()

    def _on_timed_start(self, payload) -> None:
        self.scheduler.timed(payload)

    def _on_mig_pre(self, tid: str) -> None:
        run = self.active[tid]
        task = run.task
        for part in task.parts:
            try:
                self.net.reserve(part.dest, self.net.instances[part.instance].flavor)
            except ValueError as exc:
                for done in run.members:
                    self.net.release(done.task.dest, self.net.instances[done.task.instance].flavor)
                self._drop(tid)
                self.record(self.now, "ABORT", tid, reason=str(exc))
                self.fail(task, "destination capacity lost")
                self.push(self.now, "MIG_SCHEDULER", None)
                return
            m = MemberRun(part, tid, t_pre=self.now)
            m.paths = self.net.topo.k_paths(part.source, part.dest, self.cfg.k_paths)
            run.members.append(m)
            self.members[part.id] = m
            self.record(self.now, "MIG_PRE", part.id, batch=tid, paths=len(m.paths))
        self.push(self.now + task.spec.pre_time, "MIG_START", tid)

    def _drop(self, tid: str) -> None:
        run = self.active.pop(tid)
        self.out_busy.pop(run.task.source, None)
        self.in_busy.pop(run.task.dest, None)

    def _on_mig_start(self, tid: str) -> None:
        run = self.active[tid]
        for m in run.members:
            m.t_start = self.now
            self.record(self.now, "MIG_START", m.task.id, batch=tid)
        self._begin_rounds(run.members, [m.task.spec.image for m in run.members])

    def _begin_rounds(self, members: list[MemberRun], volumes: list[float]) -> None:
        """Open the next round for each member and split its volume over
        the member's paths in proportion to their starting rates."""
        opened = []
        for m, v in zip(members, volumes):
            m.round_start = self.now
            m.volumes.append(v)
            if v <= 0 or not m.paths:  # pathless rounds stall until the end
                continue
            for j, res in enumerate(self.member_resources(m.task, m.paths)):
                key = (m.task.id, m.round, j)
                self.flows[key] = Flow(key, res)
                m.flows[j] = key
            opened.append((m, v))
        self._advance()
        rates = self.net.allocate(self._flow_resources())
        for m, v in opened:
            rs = [rates[m.flows[j]] for j in sorted(m.flows)]
            total = sum(rs)
            for j, r in zip(sorted(m.flows), rs):
                share = r / total if total > 0 else 1.0 / len(rs)
                self.flows[m.flows[j]].remaining = v * share
        self._reallocate()
        for m, v in zip(members, volumes):
            self._decide_stop(m, v)
            if v <= 0:
                self.push(self.now, "PACKET_COMPLETE", m.task.id)

    def _decide_stop(self, m: MemberRun, volume: float) -> None:
        """Stop-and-copy once the round fits the downtime budget at the
        rate it starts with, or when the round cap is reached."""
        spec = m.task.spec
        rate = self.member_rate(m)
        if spec.dirty_rate == 0:
            stop = m.round > 0
        else:
            stop = volume <= spec.downtime_threshold * rate or m.round == spec.max_rounds
        if not stop:
            return
        m.stop_copy = True
        m.stop_start = self.now
        m.capped = spec.dirty_rate > 0 and m.round == spec.max_rounds and volume > spec.downtime_threshold * rate
        self.pauses.setdefault(m.task.instance, []).append([self.now, math.inf])
        self.record(self.now, "VM_PAUSE", m.task.id, round=m.round, volume=volume, rate=rate)

    def member_rate(self, m: MemberRun) -> float:
        return sum(self.flows[k].rate for k in m.flows.values())

    def _on_subflow_complete(self, key) -> None:
        self._advance()
        flow = self.flows.pop(key)
        flow.remaining = 0.0
        m = self.members[key[0]]
        del m.flows[key[2]]
        self.record(self.now, "SUBFLOW_COMPLETE", m.task.id, round=m.round, path=key[2])
        if not m.flows:
            self.push(self.now, "PACKET_COMPLETE", m.task.id)
        self._reallocate()

    def _on_packet_complete(self, mid: str) -> None:
        m = self.members[mid]
        spec = m.task.spec
        duration = self.now - m.round_start
        m.durations.append(duration)
        volume = m.volumes[-1]
        if volume > 0 and volume <= spec.effective_dirty_rate * duration:
            m.converged = False
        self.record(self.now, "PACKET_COMPLETE", mid, round=m.round, volume=volume, duration=duration)
        if m.stop_copy:
            m.stop_end = self.now
            self.push(self.now + spec.resume_time, "VM_RESUME", mid)
            self.push(self.now + spec.post_time, "MIG_POST", mid)
            return
        m.round += 1
        self._begin_rounds([m], [spec.compression * spec.dirty_rate * duration])

    def _on_vm_resume(self, mid: str) -> None:
        m = self.members[mid]
        m.resume_done = True
        self.pauses[m.task.instance][-1][1] = self.now
        self.record(self.now, "VM_RESUME", mid)

    def _on_mig_post(self, mid: str) -> None:
        m = self.members[mid]
        m.done = True
        part = m.task
        self.closed.add(part.id)
        self.net.commit_placement(part.instance, part.dest, already_reserved=True)
        spec = part.spec
        rounds = m.round if spec.dirty_rate > 0 else 0
        self.record(
            self.now, "MIG_POST", mid, batch=m.batch, instance=part.instance, src=part.source,
            dst=part.dest, start=m.t_pre, exe=self.now - m.t_pre,
            downtime=(m.stop_end - m.stop_start) + spec.resume_time,
            transferred=sum(m.volumes), rounds=rounds, capped=m.capped, converged=m.converged,
            deadline=part.deadline,
        )
        run = self.active[m.batch]
        if all(x.done for x in run.members):
            run.state = "done"
            self._drop(m.batch)
        self._reallocate()
        self.push(self.now, "MIG_SCHEDULER", None)

    def _finish(self) -> None:
        for tid in sorted(self.active):
            run = self.active[tid]
            self.record(self.now, "ABORT", tid, reason="stalled: no bandwidth")
            self.fail(run.task, "stalled")
        for t in self.all_tasks:
            if t.id not in self.closed:
                self.fail(t, "never scheduled")
        self.record(max(self.now, self.horizon), "END", None)


# schedulers


class Scheduler:
    """Decides which pending tasks start at each scheduling point."""

    def bind(self, sim: Simulation) -> None:
        self.sim = sim
        self.pending: dict[str, MigrationTask] = {}

    def admit(self, tasks: Sequence[MigrationTask]) -> None:
        for t in tasks:
            self.pending[t.id] = t

    def schedule(self) -> None:
        raise NotImplementedError

    def timed(self, payload) -> None:
        pass

    def _start(self, task: MigrationTask) -> None:
        del self.pending[task.id]
        self.sim.start(task)

    def _fail(self, task: MigrationTask, reason: str) -> None:
        del self.pending[task.id]
        self.sim.fail(task, reason)


class GroupScheduler(Scheduler):
    """Online start of planned groups: tasks from the current and earlier
    groups start whenever feasible, and the next group is probed once per
    scheduling point so lower-priority groups never jump ahead."""

    def __init__(
        self,
        groups: Sequence[Sequence[MigrationTask]] | None = None,
        planner: Callable | None = None,
        gate: bool = True,
        exclusive: bool = True,
    ):
        self.groups = [list(g) for g in groups] if groups is not None else None
        self.planner = planner
        self.gate = gate
        self.exclusive = exclusive
        self.current = -1

    def bind(self, sim: Simulation) -> None:
        super().bind(sim)
        self._arrived: set[str] = set()
        self._seen: set[str] = set()

    def admit(self, tasks: Sequence[MigrationTask]) -> None:
        if self.planner is None:
            # fixed groups may hold merged tasks; one becomes pending once
            # all of its parts have arrived
            self._arrived.update(t.id for t in tasks)
            for grp in self.groups:
                for t in grp:
                    if t.id not in self._seen and all(p.id in self._arrived for p in t.parts):
                        self._seen.add(t.id)
                        self.pending[t.id] = t
            return
        super().admit(tasks)
        if not tasks and self.groups is not None:
            return
        ongoing = [r.task for r in self.sim.active.values()]
        sim = self.sim
        sim.net.set_busy(sim._flow_resources(), {k: f.rate for k, f in sim.flows.items()})
        try:
            result: MigrationPlan = self.planner(ongoing, list(self.pending.values()), sim.net, sim.now)
        finally:
            sim.net.set_busy({}, {})
        sim.planner_runtime += result.runtime
        self.pending = {t.id: t for t in result.tasks}
        self.groups = result.groups
        self.current = -1
        sim.record(sim.now, "PLAN", None, groups=[[t.id for t in g] for g in self.groups])

    def feasible(self, task: MigrationTask, est: Estimator) -> bool:
        sim = self.sim
        if not sim.interfaces_free(task):
            return False
        if self.gate:
            rates = sim.probe_rates(task)
            for part, r in zip(task.parts, rates):
                if not r > part.planning_spec.effective_dirty_rate:
                    return False
        if self.exclusive:
            for run in sim.active.values():
                if not is_independent(task, run.task, est):
                    return False
        return True

    def schedule(self) -> None:
        sim = self.sim
        while True:
            est = Estimator(sim.net, sim.cfg)
            started = False
            for g in range(0, self.current + 1):
                for t in self.groups[g]:
                    if t.id in self.pending and self.feasible(t, est):
                        self._start(t)
                        started = True
            if self.current + 1 < len(self.groups):
                moved = False
                for t in self.groups[self.current + 1]:
                    if t.id in self.pending and self.feasible(t, est):
                        self._start(t)
                        moved = True
                if moved:
                    self.current += 1
                    started = True
            if started or sim.active or not self.pending or sim.has_future_arrivals():
                return
            # nothing runs and nothing can start: the blocked tasks never will
            upto = min(self.current + 1, len(self.groups) - 1)
            blocked = [t for g in range(0, upto + 1) for t in self.groups[g] if t.id in self.pending]
            for t in blocked:
                self._fail(t, "insufficient bandwidth")
            self.current = upto
            if not blocked and upto == len(self.groups) - 1:
                return


class SequentialScheduler(Scheduler):
    """One migration at a time in a fixed order, no bandwidth check."""

    def __init__(self, order: Sequence[str] | None = None):
        self.order = list(order) if order is not None else None

    def admit(self, tasks):
        super().admit(tasks)
        if self.order is None:
            self.order = []
        known = set(self.order)
        self.order += sorted(t.id for t in tasks if t.id not in known)

    def schedule(self) -> None:
        if self.sim.active:
            return
        for tid in self.order:
            if tid in self.pending:
                self._start(self.pending[tid])
                return


class TimedGroupScheduler(Scheduler):
    """Starts each group at a precomputed time regardless of the network;
    a task only waits if its host interfaces are still busy."""

    def __init__(self, timed_groups: Sequence[tuple[float, Sequence[MigrationTask]]], replanner=None):
        self.timed_groups = [(t, list(g)) for t, g in timed_groups]
        self.replanner = replanner
        self.due: list[str] = []

    def bind(self, sim):
        super().bind(sim)
        for i, (t, _) in enumerate(self.timed_groups):
            sim.push(t, "TIMED_START", i)

    def admit(self, tasks):
        super().admit(tasks)
        if tasks and self.replanner is not None and self.sim.now > 0:
            for t, g in self.replanner(tasks, self.sim):
                self.timed_groups.append((t, list(g)))
                self.sim.push(t, "TIMED_START", len(self.timed_groups) - 1)

    def timed(self, index: int) -> None:
        self.due += [t.id for t in self.timed_groups[index][1]]
        self.schedule()

    def schedule(self) -> None:
        for tid in list(self.due):
            t = self.pending.get(tid)
            if t is None:
                self.due.remove(tid)
            elif self.sim.interfaces_free(t):
                self.due.remove(tid)
                self._start(t)


class GreedyRateScheduler(Scheduler):
    """Starts every pending task that can get any bandwidth at all."""

    def schedule(self) -> None:
        for tid in sorted(self.pending):
            t = self.pending[tid]
            if self.sim.interfaces_free(t) and min(self.sim.probe_rates(t)) > 0:
                self._start(t)


def slamig_scheduler(config: PlanConfig, group_deadlines: dict | None = None) -> GroupScheduler:
    def planner(ongoing, pending, net, now):
        return replan(ongoing, pending, [], net, config, group_deadlines, now)
    return GroupScheduler(planner=planner)


def rate_profiles(sim: Simulation) -> dict[str, StepProfile]:
    """Piecewise-constant rate of every watched virtual link."""
    out = {}
    for vid, pts in sim.vlink_timeline.items():
        if not pts:
            continue
        breaks, rates = [0.0], [pts[0][1]]
        for t, r in pts[1:]:
            if t <= breaks[-1]:
                rates[-1] = r
            else:
                breaks.append(t)
                rates.append(r)
        out[vid] = StepProfile(breaks, rates)
    return out


def link_usage(sim: Simulation) -> dict[LinkKey, float]:
    """Current per-link sum of migration rates (for audits)."""
    use: dict[LinkKey, float] = {}
    for f in sim.flows.values():
        for e in f.links:
            use[e] = use.get(e, 0.0) + f.rate
    return use
