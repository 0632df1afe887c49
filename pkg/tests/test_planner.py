import itertools
import random

import networkx as nx
import pytest

from migsim.migmodel import MigrationSpec
from migsim.netgraph import FLAVORS, GBPS, Network, VirtualTopology, build_fattree
from nets import add_vms, chain_net, star_net

from migsim.planner import (
    CostWeights,
    Estimator,
    MigrationTask,
    PlanConfig,
    SloTracker,
    assign_deadlines,
    build_dependency_graph,
    complete_dependency_subgraphs,
    concurrent_groups,
    is_independent,
    make_task,
    plan,
    preprocess_parallel,
    replan,
    score_tasks,
)


def oracle_total(M, R, L, thd=0.5, cap=30, pre=0.8, post=1.2):
    """Execution time by walking the rounds one at a time."""
    v, t, i = M, 0.0, 0
    while True:
        d = v / L
        t += d
        if R == 0 and i == 0:
            return pre + t + post
        if v <= thd * L or i == cap:
            return pre + t + post
        v = R * d
        i += 1


# deadlines


def test_slo_deadline():
    t = MigrationTask("t", "v", "a", "b", MigrationSpec(8e9, 0), slo=SloTracker(100, 40, 2))
    assign_deadlines([t], {})
    assert t.deadline == 30


def test_slo_without_rate_is_deadline_free():
    t = MigrationTask("t", "v", "a", "b", MigrationSpec(8e9, 0), slo=SloTracker(100, 40, 0))
    assign_deadlines([t], {})
    assert t.deadline is None and "deadline-free" in t.flags


class FixedEstimator:
    def __init__(self, times):
        self.times = times

    def bandwidth(self, task):
        return 1.0

    def exe_time(self, task, bw):
        return self.times[task.id]


def group_tasks(times, group_deadline):
    ts = [MigrationTask(k, k, "a", "b", MigrationSpec(8e9, 0), group="G") for k in times]
    assign_deadlines(ts, {"G": group_deadline}, FixedEstimator(times))
    return {t.id: t for t in ts}


def test_group_deadline_subtracts_siblings():
    ts = group_tasks({"k": 5.0, "x": 10.0, "y": 20.0}, 100)
    assert ts["k"].deadline == 70
    assert ts["x"].deadline == 75


def test_group_deadline_negative_clamped_and_flagged():
    ts = group_tasks({"k": 5.0, "x": 10.0, "y": 20.0}, 25)
    assert ts["k"].deadline == 0 and "infeasible-deadline" in ts["k"].flags


def test_explicit_deadline_untouched():
    t = MigrationTask("t", "v", "a", "b", MigrationSpec(8e9, 0), deadline=12.0,
                      slo=SloTracker(100, 40, 2))
    assign_deadlines([t], {})
    assert t.deadline == 12.0


# preprocessing


def tiny_pair(deadline_a=100.0, deadline_b=100.0, flavor="tiny", dirty=0.02):
    net = star_net(2)
    vms = {"a": "h1", "b": "h1"}
    add_vms(net, vms, flavor)
    mem = FLAVORS[flavor].memory
    ts = [make_task(net, "ta", "a", "h2", dirty_rate=dirty * mem, deadline=deadline_a),
          make_task(net, "tb", "b", "h2", dirty_rate=dirty * mem, deadline=deadline_b)]
    return net, ts, mem


def test_small_same_pair_tasks_merge():
    net, ts, mem = tiny_pair()
    L = 10 * GBPS
    par = oracle_total(mem, 0.02 * mem, L / 2)
    seq = 2 * oracle_total(mem, 0.02 * mem, L)
    assert par < seq
    out = preprocess_parallel(ts, Estimator(net, PlanConfig()))
    assert [t.id for t in out] == ["ta+tb"]
    assert out[0].instances == ("a", "b")


def test_merge_blocked_by_deadline():
    net, ts, mem = tiny_pair()
    par = oracle_total(mem, 0.02 * mem, 10 * GBPS / 2)
    ts[1].deadline = par - 1.0
    out = preprocess_parallel(ts, Estimator(net, PlanConfig()))
    assert sorted(t.id for t in out) == ["ta", "tb"]


def test_no_merge_across_pairs():
    net = star_net(3)
    add_vms(net, {"a": "h1", "b": "h1"}, "tiny")
    ts = [make_task(net, "ta", "a", "h2"), make_task(net, "tb", "b", "h3")]
    out = preprocess_parallel(ts, Estimator(net, PlanConfig()))
    assert [t.id for t in out] == ["ta", "tb"]


def test_merge_respects_parallel_cap():
    net = star_net(2)
    add_vms(net, {f"v{i}": "h1" for i in range(4)}, "micro")
    ts = [make_task(net, f"t{i}", f"v{i}", "h2") for i in range(4)]
    out = preprocess_parallel(ts, Estimator(net, PlanConfig(parallel_cap=2)))
    assert all(len(t.parts) <= 2 for t in out)
    assert sorted(p.id for t in out for p in t.parts) == [f"t{i}" for i in range(4)]


def test_large_dirty_tasks_stay_sequential():
    net = star_net(2)
    add_vms(net, {"a": "h1", "b": "h1"}, "xlarge")
    mem = FLAVORS["xlarge"].memory
    ts = [make_task(net, "ta", "a", "h2", dirty_rate=4 * GBPS),
          make_task(net, "tb", "b", "h2", dirty_rate=4 * GBPS)]
    par = oracle_total(mem, 4 * GBPS, 5 * GBPS)
    seq = 2 * oracle_total(mem, 4 * GBPS, 10 * GBPS)
    assert par >= seq
    out = preprocess_parallel(ts, Estimator(net, PlanConfig()))
    assert len(out) == 2


# independence


def test_identical_pairs_dependent():
    net = star_net(2)
    add_vms(net, {"a": "h1", "b": "h1"})
    est = Estimator(net, PlanConfig())
    j, k = make_task(net, "j", "a", "h2"), make_task(net, "k", "b", "h2")
    assert not is_independent(j, k, est)
    assert not is_independent(j, j, est)


def test_one_shared_endpoint_dependent():
    net = star_net(3)
    add_vms(net, {"a": "h1", "b": "h1"})
    est = Estimator(net, PlanConfig())
    assert not is_independent(make_task(net, "j", "a", "h2"), make_task(net, "k", "b", "h3"), est)


def test_shared_trunk_dependent():
    net = chain_net()
    add_vms(net, {"a": "h1", "b": "h3"})
    est = Estimator(net, PlanConfig())
    j, k = make_task(net, "j", "a", "h2"), make_task(net, "k", "b", "h4")
    # both single paths cross s1->s2; u(Pj) - u(Pj∩Pk) = 0 < min(10G, 10G, 10G)
    uj = est.bandwidth(j)
    assert uj - uj < min(uj, 10 * GBPS)
    assert not is_independent(j, k, est)
    assert not is_independent(k, j, est)


def test_opposite_directions_independent():
    net = chain_net()
    add_vms(net, {"a": "h1", "b": "h2"})
    est = Estimator(net, PlanConfig())
    j, k = make_task(net, "j", "a", "h2"), make_task(net, "k", "b", "h1")
    assert is_independent(j, k, est)


def test_multipath_partial_overlap():
    # two 2-path bundles overlapping on one path: the leftover path is not
    # enough to cover the interface, so they depend on each other
    net = Network(build_fattree(4, k_paths=2))
    add_vms(net, {"a": "host00.0.0", "b": "host00.0.1"})
    est = Estimator(net, PlanConfig())
    j = make_task(net, "j", "a", "host01.0.0")
    k = make_task(net, "k", "b", "host01.0.1")
    assert not is_independent(j, k, est)


def random_tasks(n, seed, pods=4, policy="free", vlinks=True, k_paths=1):
    rng = random.Random(seed)
    topo = build_fattree(pods, k_paths=k_paths)
    net = Network(topo, policy)
    hosts = sorted(topo.hosts)
    vt = VirtualTopology("g")
    for i in range(n):
        vt.add(f"v{i:03d}", FLAVORS[rng.choice(["micro", "tiny", "small", "medium"])],
               rng.choice(hosts), rng.uniform(0.01, 0.05) * 8e9)
    if vlinks:
        for i in range(n - 1):
            if rng.random() < 0.4:
                vt.connect(f"v{i:03d}", f"v{rng.randrange(i + 1, n):03d}", rng.uniform(0.05, 1) * GBPS)
    net.add_virtual(vt)
    tasks = []
    for i in range(n):
        inst = f"v{i:03d}"
        dest = rng.choice([h for h in hosts if h != net.instances[inst].host])
        tasks.append(make_task(net, f"t{i:03d}", inst, dest,
                               deadline=rng.choice([None, rng.uniform(10, 300)])))
    return net, tasks


def test_dependency_graph_matches_pairwise_oracle():
    for seed in range(4):
        net, tasks = random_tasks(12, seed, k_paths=1 + seed % 2)
        est = Estimator(net, PlanConfig())
        g = build_dependency_graph(tasks, est)
        for j, k in itertools.combinations(tasks, 2):
            assert g.has_edge(j.id, k.id) == (not is_independent(j, k, est))
            assert is_independent(j, k, est) == is_independent(k, j, est)


def test_dependency_graph_extremes():
    net = star_net(5)
    add_vms(net, {f"v{i}": "h1" for i in range(4)}, "micro")
    est = Estimator(net, PlanConfig())
    ts = [make_task(net, f"t{i}", f"v{i}", f"h{i + 2}") for i in range(4)]
    g = build_dependency_graph(ts, est)
    assert g.number_of_edges() == 6
    net2 = star_net(8)
    add_vms(net2, {f"v{i}": f"h{i + 1}" for i in range(4)}, "micro")
    est2 = Estimator(net2, PlanConfig())
    ts2 = [make_task(net2, f"t{i}", f"v{i}", f"h{i + 5}") for i in range(4)]
    assert build_dependency_graph(ts2, est2).number_of_edges() == 0


# cliques


def test_cliques_edgeless_and_complete():
    g = nx.empty_graph(["a", "b", "c"])
    assert complete_dependency_subgraphs(g) == [["a"], ["b"], ["c"]]
    assert complete_dependency_subgraphs(nx.complete_graph(["a", "b", "c"])) == [["a", "b", "c"]]


def test_cliques_path_graph():
    g = nx.Graph([("a", "b"), ("b", "c")])
    assert complete_dependency_subgraphs(g) == [["a", "b"], ["c"]]


def test_cliques_partition_property():
    rng = random.Random(8)
    for _ in range(100):
        n = rng.randint(1, 25)
        g = nx.gnp_random_graph(n, rng.random(), seed=rng.randrange(10**6))
        g = nx.relabel_nodes(g, {i: f"n{i:02d}" for i in g})
        cl = complete_dependency_subgraphs(g)
        flat = [x for c in cl for x in c]
        assert sorted(flat) == sorted(g.nodes)
        for c in cl:
            assert all(g.has_edge(a, b) for a, b in itertools.combinations(c, 2))
        # greedy maximality: nothing outside a clique's members was still
        # unvisited and adjacent to all of them when the clique closed
        seen = set()
        for c in cl:
            for n2 in g:
                if n2 not in seen and n2 not in c:
                    assert not all(g.has_edge(n2, m) for m in c)
            seen.update(c)


# cost


def test_symmetric_tasks_equal_scores():
    net = star_net(4)
    add_vms(net, {"a": "h1", "b": "h2"}, dirty=0.1 * GBPS)
    est = Estimator(net, PlanConfig())
    ts = [make_task(net, "ta", "a", "h3", deadline=50.0), make_task(net, "tb", "b", "h4", deadline=50.0)]
    g = build_dependency_graph(ts, est)
    sc = score_tasks(ts, g, est)
    assert sc["ta"].score == pytest.approx(sc["tb"].score)


def test_tighter_deadline_scores_lower_by_default():
    net = star_net(4)
    add_vms(net, {"a": "h1", "b": "h2"}, dirty=0.1 * GBPS)
    ts = [make_task(net, "ta", "a", "h3", deadline=20.0), make_task(net, "tb", "b", "h4", deadline=50.0)]
    est = Estimator(net, PlanConfig())
    sc = score_tasks(ts, build_dependency_graph(ts, est), est)
    assert sc["ta"].score < sc["tb"].score
    # the literal sign puts urgent tasks last
    est2 = Estimator(net, PlanConfig(urgent_first=False))
    sc2 = score_tasks(ts, build_dependency_graph(ts, est2), est2)
    assert sc2["ta"].score > sc2["tb"].score
    assert sc2["ta"].score - sc2["tb"].score == pytest.approx(0.3 * 30)


def consolidation_fixture():
    net = star_net(2, policy="reserved")
    vt = VirtualTopology("g")
    vt.add("x", FLAVORS["medium"], "h1", 0.2 * GBPS)
    vt.add("x2", FLAVORS["medium"], "h1", 0.2 * GBPS)
    vt.add("p", FLAVORS["tiny"], "h2")
    vt.add("y", FLAVORS["medium"], "h2", 0.2 * GBPS)
    vt.connect("p", "x", 8 * GBPS)  # h2 -> h1, the direction y migrates in
    net.add_virtual(vt)
    ts = [make_task(net, "X", "x", "h2"), make_task(net, "X2", "x2", "h2"),
          make_task(net, "Y", "y", "h1")]
    return net, ts


def test_consolidation_has_negative_direct_impact():
    net, ts = consolidation_fixture()
    est = Estimator(net, PlanConfig())
    g = build_dependency_graph(ts, est)
    assert sorted(map(sorted, g.edges)) == [["X", "X2"]]
    sc = score_tasks(ts, g, est)
    mem = FLAVORS["medium"].memory
    before = oracle_total(mem, 0.2 * GBPS, 2 * GBPS)
    after_net = net.copy()
    after_net.commit_placement("x", "h2")
    assert after_net.headroom(("s", "h1")) == 10 * GBPS
    after = oracle_total(mem, 0.2 * GBPS, 10 * GBPS)
    t_x = oracle_total(mem, 0.2 * GBPS, 10 * GBPS)
    assert sc["X"].direct == pytest.approx(1 * t_x + 2 * (after - before), rel=1e-9)
    assert sc["X"].direct < 0
    assert sc["X"].potent < 0
    assert sc["X"].score < sc["X2"].score


# groups


def test_groups_edgeless_single_group():
    g = nx.empty_graph(["a", "b", "c"])
    assert concurrent_groups(["b", "a", "c"], g, {"a": 1, "b": 0, "c": 2}) == [["b", "a", "c"]]


def test_groups_complete_one_per_task():
    g = nx.complete_graph(["a", "b", "c"])
    sc = {"a": 3.0, "b": 1.0, "c": 2.0}
    order = sorted(sc, key=sc.get)
    assert concurrent_groups(order, g, sc) == [["b"], ["c"], ["a"]]


def check_plan(p, tasks):
    ids = sorted(x.id for t in p.tasks for x in t.parts)
    assert ids == sorted(t.id for t in tasks)
    for grp in p.groups:
        for a, b in itertools.combinations(grp, 2):
            assert not p.graph.has_edge(a.id, b.id)
    costs = p.group_costs()
    assert all(x <= y + 1e-9 for x, y in zip(costs, costs[1:]))


def test_mixed_plan_audit():
    net, tasks = random_tasks(5, 42)
    check_plan(plan(tasks, net), tasks)


def test_plan_single_and_empty():
    net, tasks = random_tasks(1, 0)
    p = plan(tasks, net)
    assert [[t.id for t in g] for g in p.groups] == [["t000"]]
    assert plan([], net).groups == []


def test_plan_100_random_tasks_partition():
    net, tasks = random_tasks(100, 7)
    check_plan(plan(tasks, net), tasks)


def test_plan_deterministic():
    a = plan(random_tasks(40, 5)[1], random_tasks(40, 5)[0])
    b = plan(random_tasks(40, 5)[1], random_tasks(40, 5)[0])
    assert [[t.id for t in g] for g in a.groups] == [[t.id for t in g] for g in b.groups]


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(a=0.7, b=0.7)
    with pytest.raises(ValueError):
        CostWeights(alpha=-1)


# replanning


def test_replan_without_new_equals_plan():
    net, tasks = random_tasks(20, 9)
    a = replan([], tasks, [], net)
    net2, tasks2 = random_tasks(20, 9)
    b = plan(tasks2, net2)
    assert [[t.id for t in g] for g in a.groups] == [[t.id for t in g] for g in b.groups]


def test_replan_ongoing_bottleneck_pushes_sharer_later():
    net = chain_net()
    add_vms(net, {"o": "h3", "a": "h1", "b": "h1"}, "small", 0.2 * GBPS)
    net.instances["b"].flavor = FLAVORS["medium"]
    o = make_task(net, "O", "o", "h4")
    a = make_task(net, "A", "a", "h2")  # shares the trunk with O
    b = make_task(net, "B", "b", "h3")  # same source as A, stays on s1
    free = replan([], [a, b], [], net)
    assert [[t.id for t in g] for g in free.groups] == [["A"], ["B"]]
    est = Estimator(net, PlanConfig())
    flows = {"O": [e for e in zip(est.paths(o)[0], est.paths(o)[0][1:])]}
    net.set_busy(flows, net.allocate(flows))
    busy = replan([o], [a, b], [], net)
    assert [[t.id for t in g] for g in busy.groups] == [["B"], ["A"]]


def test_replan_arrival_burst_covers_all_once():
    net, tasks = random_tasks(30, 13)
    ongoing, pending, new = tasks[:5], tasks[5:20], tasks[20:]
    p = replan(ongoing, pending, new, net)
    ids = sorted(x.id for t in p.tasks for x in t.parts)
    assert ids == sorted(t.id for t in pending + new)
