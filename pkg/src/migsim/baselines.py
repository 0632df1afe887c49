"""Comparison schedulers and a brute-force oracle for small task sets.

The grouped-predictive and rate-maximizing schedulers are simplified
stand-ins that capture each approach's start rule, not full
implementations of those methods.
"""

from __future__ import annotations

import itertools
from typing import Iterator, Sequence

import networkx as nx

from .netgraph import Network
from .planner import (
    Estimator,
    MigrationTask,
    PlanConfig,
    assign_deadlines,
    build_dependency_graph,
    preprocess_parallel,
    score_tasks,
)
from .simcore import GreedyRateScheduler, SequentialScheduler, TimedGroupScheduler

ORACLE_LIMIT = 6


def onebyone_scheduler(order: Sequence[str] | None = None) -> SequentialScheduler:
    """Strictly sequential; tasks run in id order unless ``order`` is given."""
    return SequentialScheduler(order)


def predictive_groups(
    tasks: Sequence[MigrationTask], network: Network, config: PlanConfig, now: float = 0.0
) -> list[tuple[float, list[MigrationTask]]]:
    """Greedy groups, most beneficial direct impact first, each started when
    the previous group is predicted to finish."""
    if not tasks:
        return []
    est = Estimator(network, config)
    g = build_dependency_graph(tasks, est)
    scores = score_tasks(tasks, g, est, now)
    remaining = sorted(tasks, key=lambda t: (scores[t.id].direct, t.id))
    out = []
    t0 = now
    while remaining:
        group: list[MigrationTask] = []
        for t in remaining:
            if all(not g.has_edge(t.id, x.id) for x in group):
                group.append(t)
        out.append((t0, group))
        t0 += max(scores[t.id].exe_time for t in group)
        chosen = {t.id for t in group}
        remaining = [t for t in remaining if t.id not in chosen]
    return out


def cqncr_scheduler(tasks: Sequence[MigrationTask], network: Network, config: PlanConfig) -> TimedGroupScheduler:
    def later(new, sim):
        last = max((t for t, _ in sim.scheduler.timed_groups), default=sim.now)
        return predictive_groups(new, sim.net, config, max(sim.now, last))
    return TimedGroupScheduler(predictive_groups(tasks, network, config), replanner=later)


def fptas_scheduler() -> GreedyRateScheduler:
    return GreedyRateScheduler()


# oracle


def ordered_partitions(items: Sequence) -> Iterator[list[list]]:
    """Every ordered set partition of ``items``; blocks keep input order."""
    n = len(items)
    if n == 0:
        yield []
        return
    for labels in itertools.product(range(n), repeat=n):
        used = sorted(set(labels))
        if used != list(range(len(used))):
            continue
        yield [[items[i] for i in range(n) if labels[i] == b] for b in used]


def independent_partitions(tasks: Sequence[MigrationTask], graph: nx.Graph) -> Iterator[list[list[MigrationTask]]]:
    for part in ordered_partitions(list(tasks)):
        if all(not graph.has_edge(a.id, b.id) for blk in part for a, b in itertools.combinations(blk, 2)):
            yield part


def oracle_candidates(tasks: Sequence[MigrationTask], network: Network, config: PlanConfig,
                      group_deadlines: dict | None = None):
    """Schedules searched by the oracle: ("groups", ordered groups) over the
    merged task set, and ("sequence", order) over the raw tasks."""
    if len(tasks) > ORACLE_LIMIT:
        raise ValueError(f"oracle handles at most {ORACLE_LIMIT} tasks, got {len(tasks)}")
    est = Estimator(network, config)
    assign_deadlines(tasks, group_deadlines or {}, est)
    work = preprocess_parallel(tasks, est) if config.preprocess else list(tasks)
    g = build_dependency_graph(work, est)
    for part in independent_partitions(sorted(work, key=lambda t: t.id), g):
        yield "groups", part
    for perm in itertools.permutations(sorted(t.id for t in tasks)):
        yield "sequence", list(perm)
