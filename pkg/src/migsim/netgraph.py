"""Physical topologies, routing, virtual topologies and bandwidth sharing.

Bandwidth is in bits/s, memory and storage in bits.  Physical links are
full duplex: every cable becomes two directed links keyed ``(u, v)``.
"""

from __future__ import annotations

import copy
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import networkx as nx

GB = 8e9
GBPS = 1e9
EPS = 1e-9

Path = tuple  # node sequence, e.g. ("h1", "s1", "h2")
LinkKey = tuple  # directed (u, v); interface caps use ("@out", h) / ("@in", h)

POLICIES = ("free", "reserved", "ratio")


@dataclass(frozen=True)
class Flavor:
    name: str
    memory: float  # bits
    cores: int
    disk: float  # bits
    mipo: float = 0.0  # million instructions per network operation (VNFs)


def _flavor(name, mem_gb, cores, disk_gb, mipo=0.0):
    return Flavor(name, mem_gb * GB, cores, disk_gb * GB, mipo)


FLAVORS: dict[str, Flavor] = {
    f.name: f
    for f in (
        _flavor("xlarge", 64, 12, 120),
        _flavor("large", 16, 8, 60),
        _flavor("medium", 8, 4, 20),
        _flavor("small", 4, 2, 10),
        _flavor("tiny", 2, 1, 2),
        _flavor("micro", 1, 1, 1),
        _flavor("lb", 8, 10, 8, mipo=20),
        _flavor("ids", 8, 12, 8, mipo=200),
        _flavor("fw", 8, 16, 8, mipo=800),
        _flavor("web", 256, 8, 1000),
        _flavor("app", 256, 4, 1000),
        _flavor("db", 256, 12, 1000),
    )
}


@dataclass
class Host:
    cores: int = 24
    mips: float = 10000.0
    ram: float = 10240 * GB
    storage: float = 10e15 * 8
    iface_in: float | None = None
    iface_out: float | None = None

    def __post_init__(self) -> None:
        if self.cores <= 0 or self.mips <= 0 or self.ram <= 0 or self.storage <= 0:
            raise ValueError("host resources must be positive")


def links_of(path: Path) -> list[LinkKey]:
    return list(zip(path, path[1:]))


class PhysicalTopology:
    """Nodes (hosts, switches, routers) and directed capacitated links."""

    def __init__(self, name: str = "topology", k_paths: int = 1):
        self.name = name
        self.k_default = k_paths
        self.graph = nx.Graph()
        self.capacity: dict[LinkKey, float] = {}
        self.hosts: dict[str, Host] = {}
        self._paths: dict[tuple, list[Path]] = {}

    def add_node(self, name: str, kind: str) -> None:
        if kind not in ("host", "switch", "router"):
            raise ValueError(f"unknown node kind {kind!r}")
        self.graph.add_node(name, kind=kind)

    def add_host(self, name: str, host: Host | None = None) -> None:
        self.add_node(name, "host")
        self.hosts[name] = host or Host()

    def add_link(self, u: str, v: str, bw: float, bw_back: float | None = None) -> None:
        for n in (u, v):
            if n not in self.graph:
                raise ValueError(f"link references unknown node {n!r}")
        if bw <= 0 or (bw_back is not None and bw_back <= 0):
            raise ValueError(f"link {u}-{v}: capacity must be positive")
        self.graph.add_edge(u, v)
        self.capacity[(u, v)] = float(bw)
        self.capacity[(v, u)] = float(bw if bw_back is None else bw_back)
        self._paths.clear()

    def kind(self, node: str) -> str:
        return self.graph.nodes[node]["kind"]

    @property
    def switches(self) -> list[str]:
        return sorted(n for n, k in self.graph.nodes(data="kind") if k != "host")

    def interface_capacity(self, host: str, direction: str) -> float:
        h = self.hosts[host]
        override = h.iface_out if direction == "out" else h.iface_in
        if override is not None:
            return override
        if direction == "out":
            return sum(self.capacity[(host, n)] for n in self.graph[host])
        return sum(self.capacity[(n, host)] for n in self.graph[host])

    def interface_keys(self, src: str, dst: str) -> list[LinkKey]:
        keys = []
        if self.hosts[src].iface_out is not None:
            keys.append(("@out", src))
        if self.hosts[dst].iface_in is not None:
            keys.append(("@in", dst))
        return keys

    def key_capacity(self, key: LinkKey) -> float:
        if key[0] == "@out":
            return self.hosts[key[1]].iface_out
        if key[0] == "@in":
            return self.hosts[key[1]].iface_in
        return self.capacity[key]

    def k_paths(self, src: str, dst: str, k: int | None = None) -> list[Path]:
        """Up to ``k`` loop-free paths: shortest first, then fewest links
        shared with the paths already picked, then lexicographic."""
        k = self.k_default if k is None else k
        if src == dst:
            raise ValueError("source and destination must differ")
        for n in (src, dst):
            if n not in self.hosts:
                raise ValueError(f"unknown host {n!r}")
        key = (src, dst, k)
        if key in self._paths:
            return self._paths[key]
        try:
            cands = {tuple(p) for p in nx.all_shortest_paths(self.graph, src, dst)}
        except nx.NetworkXNoPath:
            self._paths[key] = []
            return []
        if len(cands) < k:
            more = nx.shortest_simple_paths(self.graph, src, dst)
            cands.update(tuple(p) for p in itertools.islice(more, 8 * k + 16))
        chosen: list[Path] = []
        used: set[LinkKey] = set()
        pool = sorted(cands, key=lambda p: (len(p), p))
        while pool and len(chosen) < k:
            best = min(pool, key=lambda p: (len(p), sum(l in used for l in links_of(p)), p))
            pool.remove(best)
            chosen.append(best)
            used.update(links_of(best))
        self._paths[key] = chosen
        return chosen

    def route(self, src: str, dst: str) -> Path | None:
        """Static hop-count route used for service traffic."""
        if src == dst:
            return (src,)
        paths = self.k_paths(src, dst, 1)
        return paths[0] if paths else None


def build_fattree(
    pods: int,
    host_bw: float = 10 * GBPS,
    link_bw: float = 10 * GBPS,
    host: Host | None = None,
    k_paths: int = 1,
) -> PhysicalTopology:
    if pods < 2 or pods % 2:
        raise ValueError(f"pods must be even and >= 2, got {pods}")
    half = pods // 2
    topo = PhysicalTopology(f"fattree-{pods}", k_paths=k_paths)
    cores = [f"core{i:02d}" for i in range(half * half)]
    for c in cores:
        topo.add_node(c, "switch")
    for p in range(pods):
        aggs = [f"agg{p:02d}.{i}" for i in range(half)]
        edges = [f"edge{p:02d}.{i}" for i in range(half)]
        for a in aggs + edges:
            topo.add_node(a, "switch")
        for i, a in enumerate(aggs):
            for j in range(half):
                topo.add_link(a, cores[i * half + j], link_bw)
            for e in edges:
                topo.add_link(a, e, link_bw)
        for i, e in enumerate(edges):
            for j in range(half):
                h = f"host{p:02d}.{i}.{j}"
                topo.add_host(h, copy.copy(host) if host else None)
                topo.add_link(h, e, host_bw)
    return topo


def build_wan(
    routers: Sequence[str],
    links: Sequence[Sequence],
    router_bw: float = 10 * GBPS,
    gateway_bw: float = 40 * GBPS,
    hosts_per_site: int = 1,
    host_bw: float = 10 * GBPS,
    host: Host | None = None,
    k_paths: int = 3,
) -> PhysicalTopology:
    """Routers joined by WAN links, each fronting a local cluster.

    With one host per site the host hangs directly off its router through
    the gateway link; otherwise the gateway reaches a cluster switch.
    """
    topo = PhysicalTopology("wan", k_paths=k_paths)
    for r in routers:
        topo.add_node(r, "router")
    for spec in links:
        u, v = spec[0], spec[1]
        for n in (u, v):
            if n not in topo.graph:
                raise ValueError(f"WAN link references undeclared router {n!r}")
        topo.add_link(u, v, spec[2] if len(spec) > 2 else router_bw)
    for r in routers:
        if hosts_per_site == 1:
            h = f"{r}.h0"
            topo.add_host(h, copy.copy(host) if host else None)
            topo.add_link(h, r, gateway_bw)
            continue
        sw = f"{r}.sw"
        topo.add_node(sw, "switch")
        topo.add_link(sw, r, gateway_bw)
        for i in range(hosts_per_site):
            h = f"{r}.h{i}"
            topo.add_host(h, copy.copy(host) if host else None)
            topo.add_link(h, sw, host_bw)
    return topo


def build_custom(
    nodes: Mapping[str, str],
    links: Sequence[Sequence],
    hosts: Mapping[str, Host] | None = None,
    k_paths: int = 1,
) -> PhysicalTopology:
    topo = PhysicalTopology("custom", k_paths=k_paths)
    hosts = hosts or {}
    for name, kind in nodes.items():
        if kind == "host":
            topo.add_host(name, hosts.get(name))
        else:
            topo.add_node(name, kind)
    for spec in links:
        topo.add_link(*spec)
    return topo


# Virtual topologies


@dataclass
class Instance:
    name: str
    flavor: Flavor
    host: str
    dirty_rate: float = 0.0
    group: str = ""


@dataclass
class VirtualLink:
    id: str
    src: str
    dst: str
    bw: float
    load: float | None = None  # actual throughput; defaults to bw

    def __post_init__(self) -> None:
        if self.bw <= 0:
            raise ValueError(f"virtual link {self.id}: reservation must be positive")
        if self.load is None:
            self.load = self.bw


@dataclass
class VirtualTopology:
    name: str
    kind: str = "single"
    instances: dict[str, Instance] = field(default_factory=dict)
    links: list[VirtualLink] = field(default_factory=list)
    group_deadline: float | None = None

    def add(self, name: str, flavor: Flavor, host: str, dirty_rate: float = 0.0) -> Instance:
        inst = Instance(name, flavor, host, dirty_rate, self.name)
        self.instances[name] = inst
        return inst

    def connect(self, src: str, dst: str, bw: float, load: float | None = None) -> VirtualLink:
        for n in (src, dst):
            if n not in self.instances:
                raise ValueError(f"{self.name}: virtual link endpoint {n!r} not declared")
        link = VirtualLink(f"{self.name}:{src}->{dst}", src, dst, bw, load)
        self.links.append(link)
        return link


def star_topology(name, master, slaves, bw, flavor="small") -> VirtualTopology:
    """``master``/``slaves`` are (instance, host) pairs."""
    vt = VirtualTopology(name, "star-to-slave")
    vt.add(master[0], FLAVORS[flavor], master[1])
    for inst, host in slaves:
        vt.add(inst, FLAVORS[flavor], host)
        vt.connect(master[0], inst, bw)
    return vt


def sfc_topology(name, tiers, bw) -> VirtualTopology:
    """``tiers`` is a list of tiers, each a list of (instance, flavor, host).
    Every instance of one tier connects to every instance of the next."""
    vt = VirtualTopology(name, "sfc")
    for tier in tiers:
        for inst, flavor, host in tier:
            vt.add(inst, FLAVORS[flavor], host)
    for a, b in zip(tiers, tiers[1:]):
        for x in a:
            for y in b:
                vt.connect(x[0], y[0], bw)
    return vt


def wiki_topology(name, tiers, bw) -> VirtualTopology:
    """Three-tier web application chained through VNFs:
    web -> lb1 -> fw -> app -> lb2 -> ids -> db, with the reverse path
    db -> ids -> lb2 -> app -> lb1 -> web."""
    order = ["web", "lb1", "fw", "app", "lb2", "ids", "db"]
    missing = [t for t in order if t not in tiers]
    if missing:
        raise ValueError(f"wiki topology missing tiers {missing}")
    vt = VirtualTopology(name, "wiki")
    for t in order:
        for inst, flavor, host in tiers[t]:
            vt.add(inst, FLAVORS[flavor], host)
    names = {t: [x[0] for x in tiers[t]] for t in order}
    pairs = list(zip(order, order[1:]))
    back = [("db", "ids"), ("ids", "lb2"), ("lb2", "app"), ("app", "lb1"), ("lb1", "web")]
    for a, b in pairs + back:
        for x in names[a]:
            for y in names[b]:
                vt.connect(x, y, bw)
    return vt


# Bandwidth sharing


@dataclass(frozen=True)
class Demand:
    flow: Hashable
    amount: float
    migration: bool = False
    load: float | None = None


def share_bandwidth(policy: str, capacity: float, demands: Sequence[Demand]) -> dict:
    """Split one link among service and migration flows.

    Services are served first under ``free``/``reserved`` and migrations
    split the leftover evenly; under ``ratio`` every flow gets its demand
    scaled by ``capacity / total`` when the link is oversubscribed.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    out: dict = {}
    if policy == "ratio":
        total = sum(d.amount for d in demands)
        scale = min(1.0, capacity / total) if total > 0 else 1.0
        return {d.flow: d.amount * scale for d in demands}
    services = [d for d in demands if not d.migration]
    migs = [d for d in demands if d.migration]
    res = sum(d.amount for d in services)
    scale = min(1.0, capacity / res) if res > 0 else 1.0
    for d in services:
        out[d.flow] = d.amount * scale
    if policy == "free":
        taken = sum(d.amount if d.load is None else d.load for d in services)
    else:
        taken = res
    left = max(0.0, capacity - taken)
    for d in migs:
        out[d.flow] = left / len(migs)
    return out


def max_min_fair(flows: Mapping[Hashable, Sequence[LinkKey]], capacity: Mapping[LinkKey, float]) -> dict:
    """Progressive filling over shared resources."""
    rate = {f: 0.0 for f in flows}
    users: dict[LinkKey, list] = defaultdict(list)
    for f in sorted(flows, key=repr):
        for k in flows[f]:
            users[k].append(f)
    rem = {k: max(0.0, capacity[k]) for k in users}
    active = {f for f in flows if flows[f]}
    for f in flows:
        if not flows[f]:
            rate[f] = float("inf")
    while active:
        live = {k: [f for f in fs if f in active] for k, fs in users.items()}
        live = {k: fs for k, fs in live.items() if fs}
        step = min(rem[k] / len(fs) for k, fs in live.items())
        for f in active:
            rate[f] += step
        frozen = set()
        for k, fs in live.items():
            rem[k] -= step * len(fs)
            if rem[k] <= EPS * max(1.0, capacity[k]):
                rem[k] = 0.0
                frozen.update(fs)
        active -= frozen
    return rate


class Network:
    """A physical topology plus the current virtual placement and the
    reservations it induces on every directed link."""

    def __init__(self, topo: PhysicalTopology, policy: str = "free"):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.topo = topo
        self.policy = policy
        self.vtops: dict[str, VirtualTopology] = {}
        self.instances: dict[str, Instance] = {}
        self.vlinks: dict[str, VirtualLink] = {}
        self.routes: dict[str, Path] = {}
        self.reserved: dict[LinkKey, float] = defaultdict(float)
        self.load: dict[LinkKey, float] = defaultdict(float)
        self.used: dict[str, list[float]] = defaultdict(lambda: [0, 0.0, 0.0])
        self._by_instance: dict[str, list[str]] = defaultdict(list)
        # bandwidth and subflow count of in-flight migrations, seen by planning
        self.busy_rate: dict[LinkKey, float] = {}
        self.busy_count: dict[LinkKey, int] = {}

    def copy(self) -> "Network":
        other = copy.copy(self)
        other.instances = {k: copy.copy(v) for k, v in self.instances.items()}
        other.routes = dict(self.routes)
        other.reserved = defaultdict(float, self.reserved)
        other.load = defaultdict(float, self.load)
        other.busy_rate = dict(self.busy_rate)
        other.busy_count = dict(self.busy_count)
        other.used = defaultdict(lambda: [0, 0.0, 0.0], {k: list(v) for k, v in self.used.items()})
        return other

    # placement

    def fits(self, host: str, flavor: Flavor) -> bool:
        h = self.topo.hosts[host]
        c, r, s = self.used.get(host, (0, 0.0, 0.0))
        return c + flavor.cores <= h.cores and r + flavor.memory <= h.ram and s + flavor.disk <= h.storage

    def reserve(self, host: str, flavor: Flavor) -> None:
        if host not in self.topo.hosts:
            raise ValueError(f"unknown host {host!r}")
        if not self.fits(host, flavor):
            raise ValueError(f"host {host} lacks capacity for flavor {flavor.name}")
        u = self.used[host]
        u[0] += flavor.cores
        u[1] += flavor.memory
        u[2] += flavor.disk

    def release(self, host: str, flavor: Flavor) -> None:
        u = self.used[host]
        u[0] -= flavor.cores
        u[1] -= flavor.memory
        u[2] -= flavor.disk

    def add_virtual(self, vt: VirtualTopology) -> None:
        if vt.name in self.vtops:
            raise ValueError(f"duplicate virtual topology {vt.name!r}")
        for inst in vt.instances.values():
            if inst.name in self.instances:
                raise ValueError(f"duplicate instance {inst.name!r}")
            self.reserve(inst.host, inst.flavor)
            self.instances[inst.name] = inst
        self.vtops[vt.name] = vt
        for link in vt.links:
            self.vlinks[link.id] = link
            self._by_instance[link.src].append(link.id)
            if link.dst != link.src:
                self._by_instance[link.dst].append(link.id)
            self._route(link.id)

    def incident(self, instance: str) -> list[str]:
        return self._by_instance.get(instance, [])

    def _route(self, vid: str) -> None:
        link = self.vlinks[vid]
        path = self.topo.route(self.instances[link.src].host, self.instances[link.dst].host)
        if path is None:
            raise ValueError(f"virtual link {vid} cannot be routed")
        self.routes[vid] = path
        for e in links_of(path):
            self.reserved[e] += link.bw
            self.load[e] += link.load

    def _unroute(self, vid: str) -> None:
        link = self.vlinks[vid]
        for e in links_of(self.routes.pop(vid)):
            self.reserved[e] -= link.bw
            self.load[e] -= link.load

    def commit_placement(self, instance: str, new_host: str, already_reserved: bool = False) -> None:
        """Move ``instance`` to ``new_host`` and reroute its virtual links."""
        inst = self.instances[instance]
        if new_host not in self.topo.hosts:
            raise ValueError(f"unknown host {new_host!r}")
        if not already_reserved:
            self.reserve(new_host, inst.flavor)  # raises before any change
        self.release(inst.host, inst.flavor)
        vids = self.incident(instance)
        for vid in vids:
            self._unroute(vid)
        inst.host = new_host
        for vid in vids:
            self._route(vid)

    def placement_delta(self, instance: str, new_host: str) -> dict[LinkKey, tuple[float, float]]:
        """Per-link (reserved, load) change if ``instance`` moved."""
        inst = self.instances[instance]
        delta: dict[LinkKey, list[float]] = defaultdict(lambda: [0.0, 0.0])
        for vid in self.incident(instance):
            link = self.vlinks[vid]
            for e in links_of(self.routes[vid]):
                delta[e][0] -= link.bw
                delta[e][1] -= link.load
            a = new_host if link.src == instance else self.instances[link.src].host
            b = new_host if link.dst == instance else self.instances[link.dst].host
            for e in links_of(self.topo.route(a, b)):
                delta[e][0] += link.bw
                delta[e][1] += link.load
        return {e: (r, l) for e, (r, l) in delta.items() if abs(r) > EPS or abs(l) > EPS}

    # bandwidth views

    def set_busy(self, flows: Mapping[Hashable, Sequence[LinkKey]], rates: Mapping[Hashable, float]) -> None:
        self.busy_rate, self.busy_count = defaultdict(float), defaultdict(int)
        for f, keys in flows.items():
            for e in keys:
                self.busy_rate[e] += rates[f]
                self.busy_count[e] += 1
        self.busy_rate, self.busy_count = dict(self.busy_rate), dict(self.busy_count)

    def headroom(self, e: LinkKey, delta: tuple[float, float] = (0.0, 0.0)) -> float:
        """Bandwidth a single new migration could get on ``e`` next to the
        service reservations and the in-flight migrations."""
        c = self.topo.key_capacity(e)
        if self.policy == "ratio" and e[0] not in ("@out", "@in"):
            res = max(0.0, self.reserved.get(e, 0.0) + delta[0])
            return c * c / (c + res + c * self.busy_count.get(e, 0))
        return max(0.0, self._leftover(e, delta) - self.busy_rate.get(e, 0.0))

    def _leftover(self, e: LinkKey, delta: tuple[float, float] = (0.0, 0.0)) -> float:
        """Capacity left to migrations under free/reserved sharing."""
        c = self.topo.key_capacity(e)
        if e[0] in ("@out", "@in"):
            return c
        if self.policy == "free":
            return max(0.0, c - self.load.get(e, 0.0) - delta[1])
        return max(0.0, c - self.reserved.get(e, 0.0) - delta[0])

    def bundle_headroom(self, paths: Iterable[Path], deltas=None) -> float:
        """Greedy u(P): take each path's bottleneck and subtract it."""
        deltas = deltas or {}
        left: dict[LinkKey, float] = {}
        total = 0.0
        for p in paths:
            es = links_of(p)
            for e in es:
                if e not in left:
                    left[e] = self.headroom(e, deltas.get(e, (0.0, 0.0)))
            up = min(left[e] for e in es)
            total += up
            for e in es:
                left[e] -= up
        return total

    def allocate(self, flows: Mapping[Hashable, Sequence[LinkKey]]) -> dict:
        """Rates for migration subflows given their resource lists."""
        if not flows:
            return {}
        if self.policy != "ratio":
            cap = {}
            for keys in flows.values():
                for e in keys:
                    if e not in cap:
                        cap[e] = self._leftover(e)
            return max_min_fair(flows, cap)
        mig_count: dict[LinkKey, int] = defaultdict(int)
        for keys in flows.values():
            for e in keys:
                mig_count[e] += 1
        rate = {}
        for f, keys in flows.items():
            r = float("inf")
            for e in keys:
                c = self.topo.key_capacity(e)
                if e[0] in ("@out", "@in"):
                    r = min(r, c / mig_count[e])
                    continue
                total = self.reserved.get(e, 0.0) + c * mig_count[e]
                r = min(r, c * c / total)
            rate[f] = r
        return rate

    def service_rates(
        self, flows: Mapping[Hashable, Sequence[LinkKey]] | None = None, only: Iterable[str] | None = None
    ) -> dict[str, float]:
        """Rate of every virtual link (or just ``only``) under the current migration flows."""
        mig_count: dict[LinkKey, int] = defaultdict(int)
        for keys in (flows or {}).values():
            for e in keys:
                mig_count[e] += 1
        out = {}
        for vid in self.routes if only is None else only:
            path = self.routes[vid]
            bw = self.vlinks[vid].bw
            r = float("inf") if len(path) == 1 else bw
            for e in links_of(path):
                c = self.topo.capacity[e]
                total = self.reserved[e]
                if self.policy == "ratio":
                    total += c * mig_count[e]
                if total > c:
                    r = min(r, bw * c / total)
            out[vid] = r
        return out

    def active_ports(self, extra_links: Iterable[LinkKey] = ()) -> dict[str, int]:
        """Per switch/router, the number of ports carrying any traffic."""
        busy = set()
        for vid, path in self.routes.items():
            for u, v in links_of(path):
                busy.add(frozenset((u, v)))
        for u, v in extra_links:
            if not str(u).startswith("@"):
                busy.add(frozenset((u, v)))
        ports: dict[str, int] = defaultdict(int)
        for pair in busy:
            for n in pair:
                if self.topo.kind(n) != "host":
                    ports[n] += 1
        return dict(sorted(ports.items()))

    def host_utilization(self) -> dict[str, float]:
        out = {}
        for h in sorted(self.used):
            c = self.used[h][0]
            if c > 0:
                out[h] = min(1.0, c / self.topo.hosts[h].cores)
        return out
