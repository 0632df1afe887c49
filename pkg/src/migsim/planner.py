"""Deadline- and bandwidth-aware planning of many live migrations.

The planner turns a batch of migration tasks into an ordered list of
concurrent groups: tasks inside a group share no migration resources and
groups run cheapest first.
"""

from __future__ import annotations

import dataclasses
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx

from .migmodel import MigrationSpec, estimate_constant_rate
from .netgraph import LinkKey, Network, Path, links_of


@dataclass(frozen=True)
class SloTracker:
    threshold: float
    violations: float
    rate: float

    def __post_init__(self) -> None:
        if not self.threshold > self.violations >= 0:
            raise ValueError("SLO tracker needs threshold > violations >= 0")

    def window(self) -> float | None:
        """Seconds until the violation budget runs out, None if never."""
        if self.rate <= 0:
            return None
        return (self.threshold - self.violations) / self.rate


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma, self.a, self.b) < 0:
            raise ValueError("cost weights must be non-negative")
        if not math.isclose(self.a + self.b, 1.0, abs_tol=1e-9):
            raise ValueError("impact weights a and b must sum to 1")


@dataclass
class MigrationTask:
    id: str
    instance: str
    source: str
    dest: str
    spec: MigrationSpec
    deadline: float | None = None  # absolute seconds
    slo: SloTracker | None = None
    group: str | None = None  # virtual topology carrying a group deadline
    arrival: float = 0.0
    predicted_dirty_rate: float | None = None
    members: tuple["MigrationTask", ...] = ()
    flags: set = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.source == self.dest:
            raise ValueError(f"task {self.id}: source equals destination")

    @property
    def parts(self) -> tuple["MigrationTask", ...]:
        """Single migrations making up this task (itself unless merged)."""
        return self.members or (self,)

    @property
    def instances(self) -> tuple[str, ...]:
        return tuple(m.instance for m in self.parts)

    @property
    def planning_spec(self) -> MigrationSpec:
        if self.predicted_dirty_rate is None:
            return self.spec
        return dataclasses.replace(self.spec, dirty_rate=self.predicted_dirty_rate)


def merge_tasks(tasks: Sequence[MigrationTask]) -> MigrationTask:
    first = tasks[0]
    deadlines = [t.deadline for t in tasks if t.deadline is not None]
    return MigrationTask(
        id="+".join(t.id for t in tasks),
        instance=first.instance,
        source=first.source,
        dest=first.dest,
        spec=first.spec,
        deadline=min(deadlines) if deadlines else None,
        arrival=max(t.arrival for t in tasks),
        members=tuple(tasks),
    )


def make_task(
    network: Network,
    tid: str,
    instance: str,
    dest: str,
    model: dict | None = None,
    dirty_rate: float | None = None,
    **kwargs,
) -> MigrationTask:
    """Task moving ``instance`` from its current host to ``dest``.

    ``model`` holds MigrationSpec keyword overrides (compression, rounds...).
    """
    inst = network.instances[instance]
    spec = MigrationSpec(
        memory=inst.flavor.memory,
        dirty_rate=inst.dirty_rate if dirty_rate is None else dirty_rate,
        **(model or {}),
    )
    kwargs.setdefault("group", inst.group or None)
    return MigrationTask(tid, instance, inst.host, dest, spec, **kwargs)


@dataclass
class PlanConfig:
    weights: CostWeights = field(default_factory=CostWeights)
    k_paths: int | None = None
    horizon: float = 3600.0
    urgent_first: bool = True  # negate the slack term so tight deadlines score low
    parallel_cap: int | None = None
    preprocess: bool = True


class Estimator:
    """Bandwidth and time predictions for tasks on one network snapshot."""

    def __init__(self, network: Network, config: PlanConfig):
        self.net = network
        self.cfg = config
        self._paths: dict[str, list[Path]] = {}
        self._links: dict[str, frozenset] = {}
        self._cap: dict[str, float] = {}

    def paths(self, task: MigrationTask) -> list[Path]:
        if task.id not in self._paths:
            self._paths[task.id] = self.net.topo.k_paths(task.source, task.dest, self.cfg.k_paths)
        return self._paths[task.id]

    def links(self, task: MigrationTask) -> frozenset:
        if task.id not in self._links:
            self._links[task.id] = frozenset(e for p in self.paths(task) for e in links_of(p))
        return self._links[task.id]

    def iface_cap(self, task: MigrationTask) -> float:
        if task.id not in self._cap:
            topo = self.net.topo
            self._cap[task.id] = min(topo.interface_capacity(task.source, "out"),
                                     topo.interface_capacity(task.dest, "in"))
        return self._cap[task.id]

    def bandwidth(self, task: MigrationTask, deltas=None) -> float:
        return min(self.net.bundle_headroom(self.paths(task), deltas), self.iface_cap(task))

    def exe_time(self, task: MigrationTask, bandwidth: float) -> float:
        """Predicted execution time; parts of a merged task split the rate."""
        parts = task.parts
        if bandwidth <= 0:
            return self.unreachable()
        share = bandwidth / len(parts)
        return max(estimate_constant_rate(p.planning_spec, share).total_time for p in parts)

    def unreachable(self) -> float:
        return 10.0 * max(self.cfg.horizon, 1.0)


# deadlines


def assign_deadlines(
    tasks: Sequence[MigrationTask],
    group_deadlines: dict[str, float],
    est: Estimator | None = None,
    now: float = 0.0,
) -> None:
    """Fill ``task.deadline`` (absolute) from SLO trackers and group deadlines.

    Explicit deadlines are kept.  A group member's deadline is the group
    deadline minus the predicted execution times of its siblings.
    """
    by_group: dict[str, list[MigrationTask]] = defaultdict(list)
    for t in tasks:
        if t.group is not None and t.group in group_deadlines:
            by_group[t.group].append(t)
    times = {}
    if by_group and est is not None:
        for members in by_group.values():
            for t in members:
                times[t.id] = est.exe_time(t, est.bandwidth(t))
    for t in tasks:
        if t.deadline is not None:
            continue
        if t.slo is not None:
            w = t.slo.window()
            if w is None:
                t.flags.add("deadline-free")
            else:
                t.deadline = now + w
            continue
        if t.id in times:
            siblings = sum(times[s.id] for s in by_group[t.group] if s.id != t.id)
            d = group_deadlines[t.group] - siblings
            if d <= 0:
                d = 0.0
                t.flags.add("infeasible-deadline")
            t.deadline = d


# preprocessing


def preprocess_parallel(tasks: Sequence[MigrationTask], est: Estimator, now: float = 0.0) -> list[MigrationTask]:
    """Merge small same-pair tasks that finish sooner when run side by side.

    Candidates on one (source, destination) pair are taken smallest first;
    a set is kept while its parallel completion beats the sequential sum and
    meets every member's deadline.
    """
    cap = est.cfg.parallel_cap
    pairs: dict[tuple[str, str], list[MigrationTask]] = defaultdict(list)
    out: list[MigrationTask] = []
    for t in tasks:
        if t.members:
            out.append(t)
        else:
            pairs[(t.source, t.dest)].append(t)
    for pair_tasks in pairs.values():
        if len(pair_tasks) == 1 or (cap is not None and cap < 2):
            out.extend(pair_tasks)
            continue
        L = est.bandwidth(pair_tasks[0])
        rest = sorted(pair_tasks, key=lambda t: (t.spec.image, t.spec.dirty_rate, t.id))
        while rest:
            chosen = [rest[0]]
            for cand in rest[1:]:
                if cap is not None and len(chosen) >= cap:
                    break
                trial = chosen + [cand]
                if _merge_pays(trial, L, est, now):
                    chosen = trial
                else:
                    break
            rest = rest[len(chosen):]
            out.append(chosen[0] if len(chosen) == 1 else merge_tasks(chosen))
    order = {t.id: i for i, t in enumerate(tasks)}
    return sorted(out, key=lambda t: order[t.id] if t.id in order else min(order[p.id] for p in t.parts))


def _merge_pays(trial: list[MigrationTask], L: float, est: Estimator, now: float) -> bool:
    if L <= 0:
        return False
    n = len(trial)
    parallel = max(estimate_constant_rate(t.planning_spec, L / n).total_time for t in trial)
    sequential = sum(estimate_constant_rate(t.planning_spec, L).total_time for t in trial)
    if parallel >= sequential:
        return False
    return all(t.deadline is None or now + parallel <= t.deadline for t in trial)


# dependency graph


class _Bundle:
    __slots__ = ("paths", "links", "path_links", "u", "cap")


def is_independent(j: MigrationTask, k: MigrationTask, est: Estimator) -> bool:
    """True when ``j`` and ``k`` can run together without hurting either."""
    if j.id == k.id:
        return False
    if j.source == k.source or j.dest == k.dest:
        return False
    return _paths_independent(_bundle(j, est), _bundle(k, est), est.net)


def _bundle(t: MigrationTask, est: Estimator) -> _Bundle:
    b = _Bundle()
    b.paths = est.paths(t)
    b.path_links = [set(links_of(p)) for p in b.paths]
    b.links = est.links(t)
    b.u = est.net.bundle_headroom(b.paths)
    b.cap = est.iface_cap(t)
    return b


def _paths_independent(bj: _Bundle, bk: _Bundle, net: Network) -> bool:
    if not bj.paths or not bk.paths:
        return False
    for a, b in ((bj, bk), (bk, bj)):
        shared = [p for p, ls in zip(a.paths, a.path_links) if not ls.isdisjoint(b.links)]
        u_shared = net.bundle_headroom(shared) if shared else 0.0
        if a.u - u_shared < min(a.u, a.cap) - 1e-9 * max(1.0, a.u):
            return False
    return True


def build_dependency_graph(tasks: Sequence[MigrationTask], est: Estimator) -> nx.Graph:
    g = nx.Graph()
    ids = [t.id for t in tasks]
    g.add_nodes_from(ids)
    bundles = {t.id: _bundle(t, est) for t in tasks}
    for t in tasks:
        if not bundles[t.id].paths:
            g.add_edges_from((t.id, o) for o in ids if o != t.id)
    by_src, by_dst, by_link = defaultdict(list), defaultdict(list), defaultdict(list)
    for t in tasks:
        by_src[t.source].append(t.id)
        by_dst[t.dest].append(t.id)
        for e in bundles[t.id].links:
            by_link[e].append(t.id)
    for bucket in list(by_src.values()) + list(by_dst.values()):
        for i, a in enumerate(bucket):
            for b in bucket[i + 1:]:
                g.add_edge(a, b)
    pos = {t.id: i for i, t in enumerate(tasks)}
    seen = set()
    for bucket in by_link.values():
        for i, a in enumerate(bucket):
            for b in bucket[i + 1:]:
                pair = (a, b) if pos[a] < pos[b] else (b, a)
                if pair in seen or g.has_edge(a, b):
                    continue
                seen.add(pair)
                if not _paths_independent(bundles[a], bundles[b], est.net):
                    g.add_edge(a, b)
    return g


def complete_dependency_subgraphs(g: nx.Graph) -> list[list[str]]:
    """Greedy clique cover visiting nodes in ascending id order."""
    visited: set = set()
    cliques = []
    for n in sorted(g.nodes):
        if n in visited:
            continue
        clique = [n]
        visited.add(n)
        # depth-first expansion; resumes the parent's neighbour scan afterwards
        stack = [iter(sorted(g[n]))]
        while stack:
            nb = next(stack[-1], None)
            if nb is None:
                stack.pop()
                continue
            if nb not in visited and all(g.has_edge(nb, m) for m in clique):
                clique.append(nb)
                visited.add(nb)
                stack.append(iter(sorted(g[nb])))
        cliques.append(clique)
    return cliques


# scoring


@dataclass
class TaskScore:
    exe_time: float
    slack: float
    direct: float
    potent: float
    score: float


def score_tasks(
    tasks: Sequence[MigrationTask],
    g: nx.Graph,
    est: Estimator,
    now: float = 0.0,
) -> dict[str, TaskScore]:
    cfg = est.cfg
    w = cfg.weights
    net = est.net
    bw = {t.id: est.bandwidth(t) for t in tasks}
    exe = {t.id: est.exe_time(t, bw[t.id]) for t in tasks}
    by_link: dict[LinkKey, list[MigrationTask]] = defaultdict(list)
    for t in tasks:
        for e in est.links(t):
            by_link[e].append(t)
    out = {}
    for j in tasks:
        delta: dict[LinkKey, list[float]] = defaultdict(lambda: [0.0, 0.0])
        for part in j.parts:
            for e, (r, l) in net.placement_delta(part.instance, part.dest).items():
                delta[e][0] += r
                delta[e][1] += l
        deltas = {e: tuple(v) for e, v in delta.items()}
        affected: dict[str, MigrationTask] = {}
        for e in deltas:
            for k in by_link.get(e, ()):
                if k.id != j.id:
                    affected[k.id] = k
        direct = g.degree(j.id) * exe[j.id]
        potent = 0.0
        for kid in sorted(affected):
            k = affected[kid]
            new_time = est.exe_time(k, est.bandwidth(k, deltas))
            direct += 2.0 * (new_time - exe[kid])
            cap = est.iface_cap(k)
            for p in est.paths(k):
                es = links_of(p)
                grown = []
                for e in es:
                    if e in deltas:
                        after = net.headroom(e, deltas[e])
                        if after > net.headroom(e) + 1e-9:
                            grown.append(after)
                if grown:
                    t_pot = est.exe_time(k, min(min(grown), cap))
                    potent += len(grown) / len(es) * (t_pot - exe[kid])
        d = j.deadline if j.deadline is not None else cfg.horizon
        slack = exe[j.id] - (d - now)
        if cfg.urgent_first:
            slack = -slack
        score = w.alpha * exe[j.id] + w.beta * slack + w.gamma * (w.a * direct + w.b * potent)
        out[j.id] = TaskScore(exe[j.id], slack, direct, potent, score)
    return out


def concurrent_groups(order: Sequence[str], g: nx.Graph, scores: dict[str, float]) -> list[list[str]]:
    """First-fit tasks (cheapest first) into dependency-free groups, then
    order groups by their summed score."""
    groups: list[list[str]] = []
    for t in order:
        for grp in groups:
            if not any(g.has_edge(t, o) for o in grp):
                grp.append(t)
                break
        else:
            groups.append([t])
    keyed = sorted(enumerate(groups), key=lambda ig: (sum(scores[t] for t in ig[1]), ig[0]))
    return [grp for _, grp in keyed]


@dataclass
class MigrationPlan:
    groups: list[list[MigrationTask]]
    graph: nx.Graph
    scores: dict[str, TaskScore]
    cliques: list[list[str]]
    runtime: float = 0.0

    @property
    def tasks(self) -> list[MigrationTask]:
        return [t for grp in self.groups for t in grp]

    def group_costs(self) -> list[float]:
        return [sum(self.scores[t.id].score for t in grp) for grp in self.groups]


def plan(
    tasks: Sequence[MigrationTask],
    network: Network,
    config: PlanConfig | None = None,
    group_deadlines: dict[str, float] | None = None,
    now: float = 0.0,
) -> MigrationPlan:
    cfg = config or PlanConfig()
    started = time.perf_counter()
    if not tasks:
        return MigrationPlan([], nx.Graph(), {}, [], 0.0)
    est = Estimator(network, cfg)
    assign_deadlines(tasks, group_deadlines or {}, est, now)
    work = preprocess_parallel(tasks, est, now) if cfg.preprocess else list(tasks)
    g = build_dependency_graph(work, est)
    cliques = complete_dependency_subgraphs(g)
    scores = score_tasks(work, g, est, now)
    raw = {tid: s.score for tid, s in scores.items()}
    order = sorted(raw, key=lambda tid: (raw[tid], tid))
    by_id = {t.id: t for t in work}
    groups = [[by_id[t] for t in grp] for grp in concurrent_groups(order, g, raw)]
    return MigrationPlan(groups, g, scores, cliques, time.perf_counter() - started)


def replan(
    ongoing: Iterable[MigrationTask],
    pending: Sequence[MigrationTask],
    new: Sequence[MigrationTask],
    network: Network,
    config: PlanConfig | None = None,
    group_deadlines: dict[str, float] | None = None,
    now: float = 0.0,
) -> MigrationPlan:
    """Plan pending and newly arrived tasks on the current network state;
    ongoing migrations keep running and are left out of the graph."""
    busy = {t.id for t in ongoing}
    todo = [t for t in list(pending) + list(new) if t.id not in busy]
    return plan(todo, network, config, group_deadlines, now)
