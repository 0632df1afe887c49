"""Seeded random scenarios for experiments and property tests.

Instances are spread least-full-first; migration requests then pull
connected instances together onto one host (or the fullest host that still
fits), which produces plenty of contention between requests.
"""

from __future__ import annotations

import random
from collections import defaultdict

from .netgraph import FLAVORS
from .scenario import Scenario, parse_scenario


def _host_names(topology: dict) -> list[str]:
    if topology["type"] == "fattree":
        k = topology["pods"]
        h = k // 2
        return [f"host{p:02d}.{e}.{j}" for p in range(k) for e in range(h) for j in range(h)]
    if topology["type"] == "wan":
        return [f"{r}.h{i}" for r in topology["routers"] for i in range(topology.get("hosts_per_site", 1))]
    return sorted(n for n, k in topology["nodes"].items() if k == "host")


AARNET_ROUTERS = ["adl", "alb", "arm", "bne", "cbr", "drw", "hba", "mel", "per", "syd", "tsv", "wga", "rkh"]
AARNET_LINKS = [
    ("per", "adl"), ("adl", "mel"), ("mel", "cbr"), ("cbr", "syd"), ("syd", "bne"), ("bne", "tsv"),
    ("tsv", "drw"), ("drw", "per"), ("mel", "hba"), ("syd", "arm"), ("arm", "bne"), ("alb", "mel"),
    ("alb", "syd"), ("wga", "alb"), ("wga", "cbr"), ("rkh", "tsv"), ("adl", "drw"), ("syd", "mel"),
]


def aarnet_topology(hosts_per_site: int = 1) -> dict:
    """Approximate Australian research network backbone (uniform 10 Gbps)."""
    return {"type": "wan", "routers": list(AARNET_ROUTERS), "links": [list(l) for l in AARNET_LINKS],
            "hosts_per_site": hosts_per_site}


def random_scenario_data(
    seed: int,
    n_tasks: int,
    topology: dict | None = None,
    policy: str = "free",
    flavors: tuple[str, ...] = ("micro", "tiny", "small", "medium"),
    dirty_factor: tuple[float, float] = (0.01, 0.05),
    connected: float = 0.5,
    deadline_prob: float = 0.0,
    deadline_range: tuple[float, float] = (30.0, 600.0),
    reservation: tuple[float, float] = (50.0, 1000.0),
    horizon: float = 3600.0,
) -> dict:
    rng = random.Random(seed)
    if topology is None:
        topology = {"type": "fattree", "pods": 4 if n_tasks <= 30 else 8}
    hosts = _host_names(topology)
    cores = defaultdict(int)
    cap = topology.get("host", {}).get("cores", 24)

    def least_full(need):
        fits = [h for h in hosts if cores[h] + need <= cap]
        if not fits:
            raise ValueError("synthetic scenario does not fit the topology")
        best = min(cores[h] for h in fits)
        return rng.choice([h for h in fits if cores[h] == best])

    virtual, migrations = [], []
    placed: dict[str, str] = {}
    made = 0
    g = 0
    while made < n_tasks:
        size = 1 if rng.random() >= connected else rng.randint(2, 4)
        size = min(size, n_tasks - made)
        kind = "single" if size == 1 else rng.choice(["star-to-slave", "sfc"])
        name = f"g{g:03d}"
        g += 1
        insts = {}
        for i in range(size):
            iname = f"{name}.v{i}"
            fl = rng.choice(flavors)
            h = least_full(FLAVORS[fl].cores)
            cores[h] += FLAVORS[fl].cores
            placed[iname] = h
            insts[iname] = {"flavor": fl, "host": h, "dirty_factor": round(rng.uniform(*dirty_factor), 5)}
        links = []
        names = list(insts)
        if kind == "star-to-slave":
            links = [[names[0], n, round(rng.uniform(*reservation), 1)] for n in names[1:]]
        elif kind == "sfc":
            links = [[a, b, round(rng.uniform(*reservation), 1)] for a, b in zip(names, names[1:])]
        virtual.append({"name": name, "kind": kind, "instances": insts, "links": links})
        # consolidate a connected group onto its first member's host, or
        # move a single instance to the fullest other host that fits
        anchor = placed[names[0]]
        for iname in names:
            need = FLAVORS[insts[iname]["flavor"]].cores
            src = placed[iname]
            if size > 1 and src != anchor and cores[anchor] + need <= cap:
                dest = anchor
            else:
                others = [h for h in hosts if h != src and cores[h] + need <= cap]
                if not others:
                    continue
                top = max(cores[h] for h in others)
                dest = rng.choice([h for h in others if cores[h] >= top - 2])
            if dest == src:
                continue
            cores[dest] += need
            m = {"id": f"m{made:04d}", "instance": iname, "to": dest}
            if rng.random() < deadline_prob:
                m["deadline"] = round(rng.uniform(*deadline_range), 2)
            migrations.append(m)
            made += 1
            if made >= n_tasks:
                break
    return {"name": f"random-{seed}-{n_tasks}", "seed": seed, "horizon": horizon, "policy": policy,
            "topology": topology, "virtual": virtual, "migrations": migrations}


def random_scenario(seed: int, n_tasks: int, **kwargs) -> Scenario:
    return parse_scenario(random_scenario_data(seed, n_tasks, **kwargs))
