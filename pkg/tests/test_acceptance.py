"""Acceptance criteria, one test each.

Every test records a one-line verdict; ``conftest.py`` prints them at the end
of the session (they are also printed inline when run with ``-s``).
"""

import math
import random
import time

import pytest

from nets import add_vms, star_net

from migsim.migmodel import MigrationSpec, StepProfile, estimate_constant_rate
from migsim.planner import Estimator, PlanConfig, build_dependency_graph, make_task, plan
from migsim.report import write_run
from migsim.runner import run, run_oracle, workload_streams
from migsim.scenario import FIXTURES, MBPS, fixture_path, parse_scenario
from migsim.simcore import Simulation, slamig_scheduler
from migsim.synth import random_scenario
from migsim.workload import generate_requests, transfer_time

RESULTS: dict[int, str] = {}


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def iterate_rounds(spec: MigrationSpec, L: float):
    """Round-by-round loop written independently of the package."""
    R, rho, thd, cap = spec.dirty_rate, spec.compression, spec.downtime_threshold, spec.max_rounds
    volumes, durations = [], []
    v, i = rho * spec.memory, 0
    while True:
        t = v / L
        volumes.append(v)
        durations.append(t)
        if R == 0 and i == 0:
            v, i = 0.0, 1
            continue
        if v <= thd * L or i == cap:
            break
        v, i = rho * t * R, i + 1
    downtime = durations[-1] + spec.resume_time
    return i, sum(durations), downtime, sum(volumes)


def random_spec(rng, sigma_max=0.99):
    L = rng.uniform(1e8, 4e10)
    rho = rng.choice([1.0, rng.uniform(0.3, 1.0)])
    sigma = rng.uniform(0.0, sigma_max)
    spec = MigrationSpec(rng.uniform(1e9, 5e11), sigma * L / rho, compression=rho,
                         downtime_threshold=rng.uniform(0.01, 2.0), max_rounds=rng.randint(1, 60))
    return spec, L


def test_c01_closed_form_matches_iteration():
    rng = random.Random(1)
    cases = [random_spec(rng) for _ in range(1000)]
    t0 = time.perf_counter()
    worst, n_bad = 0.0, 0
    for spec, L in cases:
        n, mem, down, sent = iterate_rounds(spec, L)
        est = estimate_constant_rate(spec, L)
        n_bad += est.rounds != n
        worst = max(worst, rel(est.mem_time, mem), rel(est.downtime, down), rel(est.transferred, sent))
    elapsed = time.perf_counter() - t0
    verdict(1, "closed form vs iteration", n_bad == 0 and worst <= 1e-9 and elapsed < 5.0,
            f"round mismatches {n_bad}, worst rel err {worst:.2e}, {elapsed:.2f} s")


def test_c02_worked_case():
    spec = MigrationSpec(8e9, 0.5e9, compression=1.0, downtime_threshold=0.5, max_rounds=30)
    est = estimate_constant_rate(spec, 1e9)
    n, mem, _, sent = iterate_rounds(spec, 1e9)
    ok = (est.rounds == n == 4 and est.mem_time == pytest.approx(15.5, abs=1e-9) and mem == pytest.approx(15.5)
          and est.transferred == pytest.approx(15.5e9, rel=1e-12) and sent == pytest.approx(15.5e9))
    verdict(2, "worked case", ok, f"n={est.rounds}, T_mem={est.mem_time:.6f} s, transferred={est.transferred:.6e} bits")


def test_c03_simulator_matches_model():
    rng = random.Random(3)
    worst = 0.0
    for _ in range(100):
        spec, L = random_spec(rng)
        net = star_net(2, bw=L)
        add_vms(net, {"a": "h1"})
        t = make_task(net, "t", "a", "h2")
        t.spec = spec
        cfg = PlanConfig()
        sim = Simulation(net, [t], slamig_scheduler(cfg), cfg).run()
        rec = next(r for r in sim.trace if r["kind"] == "MIG_POST")
        worst = max(worst, abs(rec["exe"] - estimate_constant_rate(spec, L).total_time))
    verdict(3, "simulator vs model", worst <= 1e-6, f"worst |T_mig error| {worst:.2e} s over 100 specs")


def test_c04_motivation_order():
    sc = parse_scenario(fixture_path("motivation"))
    s1 = run(sc, order="s1").summary()
    s2 = run(sc, order="s2").summary()
    t1, t2 = s1["total_migration_time"], s2["total_migration_time"]
    gap = (t2 - t1) / t2
    ok = t1 < t2 and gap >= 0.15 and s1["avg_downtime"] <= s2["avg_downtime"]
    verdict(4, "motivation order", ok,
            f"S1 {t1:.1f} s vs S2 {t2:.1f} s (gap {gap:.1%}), downtime {s1['avg_downtime']:.3f} vs {s2['avg_downtime']:.3f}")


def test_c05_plan_validity():
    rng = random.Random(5)
    t0 = time.perf_counter()
    bad = []
    for seed in range(200):
        n = rng.randint(5, 100)
        sc = random_scenario(seed, n, policy=rng.choice(["free", "reserved", "ratio"]), deadline_prob=0.3)
        net = sc.build_network()
        tasks = sc.build_tasks(net)
        p = plan(tasks, net, sc.plan_config(), sc.group_deadlines())
        ids = [part.id for t in p.tasks for part in t.parts]
        partition = sorted(ids) == sorted(t.id for t in tasks)
        independent = all(not p.graph.has_edge(a.id, b.id)
                          for g in p.groups for i, a in enumerate(g) for b in g[i + 1:])
        costs = p.group_costs()
        ordered = all(x <= y + 1e-9 * max(1.0, abs(y)) for x, y in zip(costs, costs[1:]))
        if not (partition and independent and ordered):
            bad.append(seed)
    elapsed = time.perf_counter() - t0
    verdict(5, "plan validity", not bad and elapsed < 60.0,
            f"{200 - len(bad)}/200 valid, {elapsed:.1f} s" + (f", bad seeds {bad[:5]}" if bad else ""))


def test_c06_oracle_dominance():
    bad = []
    for i in range(50):
        sc = random_scenario(1000 + i, 1 + i % 5)
        o = run_oracle(sc).summary()["total_migration_time"]
        s = run(sc, "slamig").summary()["total_migration_time"]
        b = run(sc, "onebyone").summary()["total_migration_time"]
        if not (o <= s + 1e-9 and s <= b + 1e-9):
            bad.append((1000 + i, round(o, 3), round(s, 3), round(b, 3)))
    verdict(6, "oracle <= SLAMIG <= oneByOne", not bad,
            f"{50 - len(bad)}/50 scenarios hold" + (f", violations {bad[:3]}" if bad else ""))


def has_independent_pair(sc) -> bool:
    net = sc.build_network()
    tasks = sc.build_tasks(net)
    cfg = sc.plan_config()
    cfg.preprocess = False
    g = build_dependency_graph(tasks, Estimator(net, cfg))
    return any(not g.has_edge(a.id, b.id) for i, a in enumerate(tasks) for b in tasks[i + 1:])


# large-scale families: micro to large flavors with low (0.01-0.05) or
# high (0.01-0.15) dirty factors
FAMILIES = {"low": (0.01, 0.05), "high": (0.01, 0.15)}
SIZES = ("micro", "tiny", "small", "medium", "large")


def test_c07_improvement_over_onebyone():
    strict_needed = strict_held = total = 0
    worse = []
    for fam, dirty in FAMILIES.items():
        for seed in range(150):
            policy = ("free", "reserved", "ratio")[seed % 3]
            sc = random_scenario(seed, 2 + seed % 19, policy=policy, flavors=SIZES, dirty_factor=dirty)
            s = run(sc, "slamig").summary()["total_migration_time"]
            b = run(sc, "onebyone").summary()["total_migration_time"]
            total += 1
            if s > b + 1e-9:
                worse.append(f"{fam}/{seed}/{policy} {s:.1f}>{b:.1f}")
            if has_independent_pair(sc):
                strict_needed += 1
                strict_held += s < b
    ok = not worse and strict_held == strict_needed
    verdict(7, "improvement over oneByOne", ok,
            f"strictly better on {strict_held}/{strict_needed} scenarios with an independent pair, "
            f"worse on {len(worse)}/{total}" + (f" ({', '.join(worse)})" if worse else ""))


def test_c08_starvation():
    sc = parse_scenario(fixture_path("starvation"))
    thd = sc.model["downtime_threshold"]
    fp = [r for r in run(sc, "fptas").rows() if r.status == "done"]
    sl = run(sc, "slamig").rows()
    fptas_bad = any(r.capped and r.downtime > thd for r in fp)
    starts = sorted(r.start for r in sl if r.status == "done")
    deferred = len(starts) == len(sl) and starts[0] < starts[-1]
    slamig_ok = all(r.status == "done" and r.converged and not r.capped for r in sl)
    verdict(8, "starvation", fptas_bad and deferred and slamig_ok,
            f"FPTAS capped {sum(r.capped for r in fp)}/{len(fp)} max downtime {max(r.downtime for r in fp):.1f} s; "
            f"SLAMIG converged {sum(bool(r.converged) for r in sl)}/{len(sl)} max downtime "
            f"{max(r.downtime or 0 for r in sl):.3f} s")


def test_c09_deadline_awareness():
    sc = parse_scenario(fixture_path("deadline"))
    b = run(sc, "onebyone").summary()["deadline_misses"]
    s = run(sc, "slamig").summary()["deadline_misses"]
    verdict(9, "deadline awareness", len(sc.migrations) == 3 and b >= 1 and s == 0,
            f"oneByOne misses {b}, SLAMIG misses {s}")


def test_c10_determinism(tmp_path):
    diffs, runs = [], 0
    for path in sorted(FIXTURES.glob("*.yaml")):
        sc = parse_scenario(path)
        variants = [("slamig", None), ("onebyone", None)] + [("slamig", o) for o in sorted(sc.orders)]
        for algo, order in variants:
            label = f"{path.stem}-{algo}-{order}"
            for d in ("a", "b"):
                write_run(run(sc, algo, order=order), tmp_path / d / label, trace=True)
            runs += 1
            for name in ("summary.json", "tasks.csv", "trace.jsonl"):
                if (tmp_path / "a" / label / name).read_bytes() != (tmp_path / "b" / label / name).read_bytes():
                    diffs.append(f"{label}/{name}")
    verdict(10, "determinism", not diffs, f"{runs} fixture runs repeated, {len(diffs)} differing files")


def planner_seconds(n: int, seed: int) -> float:
    sc = random_scenario(seed, n, topology={"type": "fattree", "pods": 8, "host": {"cores": 96}})
    net = sc.build_network()
    tasks = sc.build_tasks(net)
    t0 = time.perf_counter()
    plan(tasks, net, sc.plan_config())
    return time.perf_counter() - t0


def test_c11_planner_scaling():
    small = min(planner_seconds(100, 11) for _ in range(3))
    big = planner_seconds(1000, 11)
    slope = math.log(big / small) / math.log(10)
    verdict(11, "planner scaling", big < 60.0 and slope <= 2.3,
            f"100 tasks {small:.3f} s, 1000 tasks {big:.2f} s, log-log slope {slope:.2f}")


def qos_run(policy: str, migrate: bool):
    data = parse_scenario(fixture_path("qos")).to_dict()
    if not migrate:
        data["migrations"] = []
    sc = parse_scenario(data)
    res = run(sc, "slamig", policy=policy)
    return sc, res, {r["request"]: r for r in res.trace if r["kind"] == "REQUEST"}


def expected_ratio_times(sc, res):
    """Recompute wire times from scenario numbers and the migration's
    flow window in the trace, without the allocator."""
    trunk = next(l[2] for l in sc.topology["links"] if {l[0], l[1]} == {"s1", "s2"}) * MBPS
    link = sc.virtual[0]["links"][0]
    bw = link[2] * MBPS
    reserved = bw  # the only virtual link crossing the trunk
    flows = [r["t"] for r in res.trace if r["kind"] in ("MIG_START", "PACKET_COMPLETE")]
    start, stop = min(flows), max(flows)
    total = reserved + trunk * 1
    degraded = bw * trunk / total if total > trunk else bw
    profile = StepProfile([0.0, start, stop], [bw, degraded, bw])
    net = sc.build_network()
    streams = workload_streams(sc, net)
    reqs = generate_requests(list(streams.values()), sc.horizon, sc.seed)
    mips = net.topo.hosts[net.instances["web"].host].mips
    want = {r.id: transfer_time(profile, r.arrival + r.sender_load / mips, r.size) for r in reqs}
    vlinks = [r for r in res.trace if r["kind"] == "VLINK"]
    during = [r["rate"] for r in vlinks if start <= r["t"] < stop]
    return want, degraded, during


def test_c12_qos_policies():
    notes, ok = [], True
    for policy in ("free", "reserved"):
        _, _, with_mig = qos_run(policy, True)
        _, _, without = qos_run(policy, False)
        same = with_mig.keys() == without.keys() and all(
            with_mig[k]["network"] == without[k]["network"] for k in with_mig)
        ok &= same and len(with_mig) > 0
        notes.append(f"{policy}: {len(with_mig)} requests {'identical' if same else 'DIFFER'}")
    sc, res, got = qos_run("ratio", True)
    _, _, base = qos_run("ratio", False)
    want, degraded, during = expected_ratio_times(sc, res)
    worst = max(rel(got[k]["network"], want[k]) for k in got)
    slower = sum(got[k]["network"] > base[k]["network"] * (1 + 1e-9) for k in got)
    trace_rate_ok = bool(during) and all(r == pytest.approx(degraded, rel=1e-12) for r in during)
    ok &= got.keys() == want.keys() and worst <= 1e-9 and slower > 0 and trace_rate_ok
    notes.append(f"ratio: rate {degraded / MBPS:.2f} Mbps during migration, {slower} requests slowed, "
                 f"worst rel err {worst:.1e}")
    verdict(12, "QoS policies", ok, "; ".join(notes))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
