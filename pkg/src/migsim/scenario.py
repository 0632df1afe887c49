"""Scenario files: parsing, validation, defaults and conversion to models.

Files are YAML or JSON.  Bandwidth is given in Mbps, memory/disk in GB,
time in seconds; everything is converted to bits and bits/s on build.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import yaml

from .netgraph import (
    FLAVORS,
    GB,
    Flavor,
    Host,
    Network,
    PhysicalTopology,
    VirtualTopology,
    build_custom,
    build_fattree,
    build_wan,
)
from .planner import CostWeights, MigrationTask, PlanConfig, SloTracker, make_task

MBPS = 1e6

POLICIES = ("free", "reserved", "ratio")
KINDS = ("single", "star-to-slave", "sfc", "wiki")

MODEL_DEFAULTS = {
    "compression": 1.0,
    "pre_time": 0.8,
    "post_time": 1.2,
    "resume_time": None,
    "max_rounds": 30,
    "downtime_threshold": 0.5,
}
WEIGHT_DEFAULTS = {"alpha": 0.5, "beta": 0.3, "gamma": 0.2, "a": 0.5, "b": 0.5, "urgent_first": True}
PLANNER_DEFAULTS = {"preprocess": True, "parallel_cap": None}
POWER_DEFAULTS = {"host_idle": 100.0, "host_peak": 250.0, "switch_static": 66.0, "switch_port": 1.0}
HOST_DEFAULTS = {"cores": 24, "mips": 10000.0, "ram": 10240.0, "storage": 10e6,
                 "iface_in": None, "iface_out": None}


class ScenarioError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _num(value, where, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(where, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ScenarioError(where, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ScenarioError(where, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ScenarioError(where, f"must be non-negative, got {value!r}")
    return int(value) if integer else float(value)


def _opt_num(value, where, **kw):
    return None if value is None else _num(value, where, **kw)


def _merge(defaults: dict, given: dict | None, where: str) -> dict:
    given = given or {}
    if not isinstance(given, dict):
        raise ScenarioError(where, "expected a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ScenarioError(where, f"unknown keys {sorted(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


@dataclass
class Scenario:
    name: str
    seed: int
    horizon: float
    policy: str
    topology: dict
    flavors: dict
    virtual: list
    migrations: list
    workloads: list = field(default_factory=list)
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    weights: dict = field(default_factory=lambda: dict(WEIGHT_DEFAULTS))
    planner: dict = field(default_factory=lambda: dict(PLANNER_DEFAULTS))
    power: dict = field(default_factory=lambda: dict(POWER_DEFAULTS))
    orders: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Normalized file-unit form; parsing it yields the same scenario."""
        return copy.deepcopy({
            "name": self.name, "seed": self.seed, "horizon": self.horizon, "policy": self.policy,
            "topology": self.topology, "flavors": self.flavors, "virtual": self.virtual,
            "migrations": self.migrations, "workloads": self.workloads, "model": self.model,
            "weights": self.weights, "planner": self.planner, "power": self.power,
            "orders": self.orders,
        })

    # builders

    def flavor(self, name: str) -> Flavor:
        f = self.flavors[name]
        return Flavor(name, f["memory"] * GB, int(f["cores"]), f["disk"] * GB, f.get("mipo", 0.0))

    def build_topology(self) -> PhysicalTopology:
        t = self.topology
        base = _host(t["host"])
        if t["type"] == "fattree":
            topo = build_fattree(t["pods"], t["host_bw"] * MBPS, t["link_bw"] * MBPS, base, t["k_paths"])
        elif t["type"] == "wan":
            links = [(l[0], l[1], l[2] * MBPS) if len(l) > 2 else (l[0], l[1]) for l in t["links"]]
            topo = build_wan(t["routers"], links, t["router_bw"] * MBPS, t["gateway_bw"] * MBPS,
                             t["hosts_per_site"], t["host_bw"] * MBPS, base, t["k_paths"])
        else:
            hosts = {n: _host(t["host"]) for n, k in t["nodes"].items() if k == "host"}
            links = [(l[0], l[1], l[2] * MBPS) for l in t["links"]]
            topo = build_custom(t["nodes"], links, hosts, t["k_paths"])
        for name, over in t.get("hosts", {}).items():
            topo.hosts[name] = _host(dict(t["host"], **over))
        return topo

    def build_network(self, policy: str | None = None) -> Network:
        net = Network(self.build_topology(), policy or self.policy)
        for v in self.virtual:
            vt = VirtualTopology(v["name"], v["kind"], group_deadline=v["group_deadline"])
            for iname, inst in v["instances"].items():
                fl = self.flavor(inst["flavor"])
                rate = inst["dirty_rate"] * MBPS if inst["dirty_rate"] is not None else 0.0
                if inst["dirty_factor"] is not None:
                    rate = inst["dirty_factor"] * fl.memory
                vt.add(iname, fl, inst["host"], rate)
            for l in v["links"]:
                vt.connect(l[0], l[1], l[2] * MBPS, l[3] * MBPS if len(l) > 3 else None)
            net.add_virtual(vt)
        return net

    def group_deadlines(self) -> dict[str, float]:
        return {v["name"]: v["group_deadline"] for v in self.virtual if v["group_deadline"] is not None}

    def spec_overrides(self) -> dict:
        return {k: v for k, v in self.model.items()}

    def build_tasks(self, net: Network) -> list[MigrationTask]:
        tasks = []
        for m in self.migrations:
            slo = SloTracker(**m["slo"]) if m["slo"] else None
            tasks.append(make_task(
                net, m["id"], m["instance"], m["to"], model=self.spec_overrides(),
                dirty_rate=None if m["dirty_rate"] is None else m["dirty_rate"] * MBPS,
                deadline=m["deadline"], slo=slo, arrival=m["arrival"],
                predicted_dirty_rate=None if m["predicted_dirty_rate"] is None
                else m["predicted_dirty_rate"] * MBPS,
            ))
        return tasks

    def plan_config(self) -> PlanConfig:
        w = dict(self.weights)
        urgent = w.pop("urgent_first")
        return PlanConfig(
            weights=CostWeights(**w), horizon=self.horizon, urgent_first=urgent,
            parallel_cap=self.planner["parallel_cap"], preprocess=self.planner["preprocess"],
        )


def _host(d: dict) -> Host:
    return Host(
        cores=int(d["cores"]), mips=d["mips"], ram=d["ram"] * GB, storage=d["storage"] * GB,
        iface_in=None if d["iface_in"] is None else d["iface_in"] * MBPS,
        iface_out=None if d["iface_out"] is None else d["iface_out"] * MBPS,
    )


# parsing


def load_file(path: str | FsPath) -> dict:
    p = FsPath(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(str(p), f"cannot read file ({exc.strerror})") from exc
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ScenarioError(str(p), f"malformed file: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(str(p), "top level must be a mapping")
    return data


def parse_scenario(source: str | FsPath | dict) -> Scenario:
    data = source if isinstance(source, dict) else load_file(source)
    known = {"name", "seed", "horizon", "policy", "topology", "flavors", "virtual", "migrations",
             "workloads", "model", "weights", "planner", "power", "orders", "description"}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError("<root>", f"unknown keys {sorted(unknown)}")
    policy = data.get("policy", "free")
    if policy not in POLICIES:
        raise ScenarioError("policy", f"must be one of {POLICIES}, got {policy!r}")
    topo = _parse_topology(data.get("topology"))
    flavors = _parse_flavors(data.get("flavors") or {})
    hosts = _hosts_of(topo)
    virtual, instances = _parse_virtual(data.get("virtual") or [], flavors, hosts)
    migrations = _parse_migrations(data.get("migrations") or [], instances, hosts)
    workloads = _parse_workloads(data.get("workloads") or [], virtual)
    model = _merge(MODEL_DEFAULTS, data.get("model"), "model")
    for k, v in model.items():
        if k == "max_rounds":
            _num(v, "model.max_rounds", positive=True, integer=True)
        elif v is not None:
            _num(v, f"model.{k}", nonneg=True)
    weights = _merge(WEIGHT_DEFAULTS, data.get("weights"), "weights")
    try:
        CostWeights(**{k: v for k, v in weights.items() if k != "urgent_first"})
    except (ValueError, TypeError) as exc:
        raise ScenarioError("weights", str(exc)) from exc
    planner = _merge(PLANNER_DEFAULTS, data.get("planner"), "planner")
    power = _merge(POWER_DEFAULTS, data.get("power"), "power")
    for k, v in power.items():
        _num(v, f"power.{k}", nonneg=True)
    if power["host_peak"] < power["host_idle"]:
        raise ScenarioError("power.host_peak", "must be >= host_idle")
    orders = _parse_orders(data.get("orders") or {}, {m["id"] for m in migrations})
    horizon = _num(data.get("horizon", 3600.0), "horizon", positive=True)
    seed = _num(data.get("seed", 0), "seed", nonneg=True, integer=True)
    sc = Scenario(
        name=str(data.get("name", "scenario")), seed=seed, horizon=horizon, policy=policy,
        topology=topo, flavors=flavors, virtual=virtual, migrations=migrations,
        workloads=workloads, model=model, weights=weights, planner=planner, power=power,
        orders=orders,
    )
    try:
        net = sc.build_network()
    except ValueError as exc:
        raise ScenarioError("virtual", str(exc)) from exc
    try:
        sc.build_tasks(net)
    except ValueError as exc:
        raise ScenarioError("migrations", str(exc)) from exc
    return sc


def _parse_topology(t) -> dict:
    if not isinstance(t, dict) or "type" not in t:
        raise ScenarioError("topology", "exactly one topology with a 'type' is required")
    kind = t["type"]
    common = {"type": kind, "k_paths": 3 if kind == "wan" else 1, "host": dict(HOST_DEFAULTS), "hosts": {}}
    if kind == "fattree":
        out = _merge(dict(common, pods=4, link_bw=10000.0, host_bw=10000.0), t, "topology")
        _num(out["pods"], "topology.pods", positive=True, integer=True)
        if out["pods"] % 2 or out["pods"] < 2:
            raise ScenarioError("topology.pods", f"must be even and >= 2, got {out['pods']}")
    elif kind == "wan":
        out = _merge(dict(common, routers=[], links=[], router_bw=10000.0, gateway_bw=40000.0,
                          hosts_per_site=1, host_bw=10000.0), t, "topology")
        routers = set(out["routers"])
        for i, l in enumerate(out["links"]):
            for n in l[:2]:
                if n not in routers:
                    raise ScenarioError(f"topology.links[{i}]", f"undeclared router {n!r}")
            if len(l) > 2:
                _num(l[2], f"topology.links[{i}][2]", positive=True)
        out["links"] = [list(l) for l in out["links"]]
    elif kind == "custom":
        out = _merge(dict(common, nodes={}, links=[]), t, "topology")
        for n, k in out["nodes"].items():
            if k not in ("host", "switch", "router"):
                raise ScenarioError(f"topology.nodes.{n}", f"unknown node kind {k!r}")
        for i, l in enumerate(out["links"]):
            if len(l) != 3:
                raise ScenarioError(f"topology.links[{i}]", "expected [u, v, Mbps]")
            for n in l[:2]:
                if n not in out["nodes"]:
                    raise ScenarioError(f"topology.links[{i}]", f"unknown node {n!r}")
            _num(l[2], f"topology.links[{i}][2]", positive=True)
        out["links"] = [list(l) for l in out["links"]]
    else:
        raise ScenarioError("topology.type", f"must be fattree, wan or custom, got {kind!r}")
    for k in ("link_bw", "host_bw", "router_bw", "gateway_bw"):
        if k in out:
            _num(out[k], f"topology.{k}", positive=True)
    out["host"] = _merge(HOST_DEFAULTS, out["host"], "topology.host")
    for k, v in out["host"].items():
        if k.startswith("iface"):
            _opt_num(v, f"topology.host.{k}", positive=True)
        else:
            _num(v, f"topology.host.{k}", positive=True)
    for h, over in out["hosts"].items():
        _merge(HOST_DEFAULTS, over, f"topology.hosts.{h}")
    _num(out["k_paths"], "topology.k_paths", positive=True, integer=True)
    return out


def _hosts_of(topo: dict) -> set[str]:
    if topo["type"] == "custom":
        return {n for n, k in topo["nodes"].items() if k == "host"}
    if topo["type"] == "wan":
        n = topo["hosts_per_site"]
        return {f"{r}.h{i}" for r in topo["routers"] for i in range(n)}
    pods = topo["pods"]
    half = pods // 2
    return {f"host{p:02d}.{e}.{j}" for p in range(pods) for e in range(half) for j in range(half)}


def _parse_flavors(given: dict) -> dict:
    out = {
        name: {"memory": f.memory / GB, "cores": f.cores, "disk": f.disk / GB, "mipo": f.mipo}
        for name, f in FLAVORS.items()
    }
    for name, f in given.items():
        f = _merge({"memory": None, "cores": None, "disk": None, "mipo": 0.0}, f, f"flavors.{name}")
        for k in ("memory", "cores", "disk"):
            _num(f[k], f"flavors.{name}.{k}", positive=True)
        out[name] = f
    return out


def _parse_virtual(items, flavors, hosts):
    out, instances = [], {}
    names = set()
    for i, v in enumerate(items):
        where = f"virtual[{i}]"
        v = _merge({"name": f"g{i}", "kind": "single", "group_deadline": None,
                    "instances": {}, "links": []}, v, where)
        if v["name"] in names:
            raise ScenarioError(f"{where}.name", f"duplicate virtual topology {v['name']!r}")
        names.add(v["name"])
        if v["kind"] not in KINDS:
            raise ScenarioError(f"{where}.kind", f"must be one of {KINDS}")
        _opt_num(v["group_deadline"], f"{where}.group_deadline", positive=True)
        insts = {}
        for iname, inst in v["instances"].items():
            w = f"{where}.instances.{iname}"
            inst = _merge({"flavor": None, "host": None, "dirty_rate": None, "dirty_factor": None}, inst, w)
            if inst["flavor"] not in flavors:
                raise ScenarioError(f"{w}.flavor", f"unknown flavor {inst['flavor']!r}")
            if inst["host"] not in hosts:
                raise ScenarioError(f"{w}.host", f"unknown host {inst['host']!r}")
            _opt_num(inst["dirty_rate"], f"{w}.dirty_rate", nonneg=True)
            _opt_num(inst["dirty_factor"], f"{w}.dirty_factor", nonneg=True)
            if iname in instances:
                raise ScenarioError(w, f"duplicate instance {iname!r}")
            instances[iname] = v["name"]
            insts[iname] = inst
        v["instances"] = insts
        for j, l in enumerate(v["links"]):
            w = f"{where}.links[{j}]"
            if len(l) not in (3, 4):
                raise ScenarioError(w, "expected [src, dst, Mbps] or [src, dst, Mbps, load Mbps]")
            for n in l[:2]:
                if n not in insts:
                    raise ScenarioError(w, f"unknown instance {n!r}")
            for x in l[2:]:
                _num(x, w, positive=True)
        v["links"] = [list(l) for l in v["links"]]
        out.append(v)
    return out, instances


def _parse_migrations(items, instances, hosts):
    out, ids = [], set()
    for i, m in enumerate(items):
        where = f"migrations[{i}]"
        m = _merge({"id": f"m{i}", "instance": None, "to": None, "deadline": None, "slo": None,
                    "arrival": 0.0, "dirty_rate": None, "predicted_dirty_rate": None}, m, where)
        m["id"] = str(m["id"])
        if m["id"] in ids:
            raise ScenarioError(f"{where}.id", f"duplicate migration id {m['id']!r}")
        ids.add(m["id"])
        if m["instance"] not in instances:
            raise ScenarioError(f"{where}.instance", f"unknown instance {m['instance']!r}")
        if m["to"] not in hosts:
            raise ScenarioError(f"{where}.to", f"unknown host {m['to']!r}")
        _opt_num(m["deadline"], f"{where}.deadline", nonneg=True)
        m["arrival"] = _num(m["arrival"], f"{where}.arrival", nonneg=True)
        _opt_num(m["dirty_rate"], f"{where}.dirty_rate", nonneg=True)
        _opt_num(m["predicted_dirty_rate"], f"{where}.predicted_dirty_rate", nonneg=True)
        if m["slo"] is not None:
            m["slo"] = _merge({"threshold": None, "violations": 0.0, "rate": None}, m["slo"], f"{where}.slo")
            for k in ("threshold", "violations", "rate"):
                _num(m["slo"][k], f"{where}.slo.{k}")
            if not m["slo"]["threshold"] > m["slo"]["violations"] >= 0:
                raise ScenarioError(f"{where}.slo", "needs threshold > violations >= 0")
        out.append(m)
    return out


def _parse_workloads(items, virtual):
    vnames = {v["name"]: v for v in virtual}
    out = []
    for i, w in enumerate(items):
        where = f"workloads[{i}]"
        w = _merge({"vtop": None, "rate": 20.0, "packet": 5.0, "sender_load": 100.0,
                    "receiver_load": 50.0, "chains": None, "start": 0.0, "stop": None}, w, where)
        if w["vtop"] not in vnames:
            raise ScenarioError(f"{where}.vtop", f"unknown virtual topology {w['vtop']!r}")
        for k in ("rate", "packet", "sender_load", "receiver_load"):
            _num(w[k], f"{where}.{k}", positive=True)
        _num(w["start"], f"{where}.start", nonneg=True)
        _opt_num(w["stop"], f"{where}.stop", positive=True)
        v = vnames[w["vtop"]]
        pairs = {(l[0], l[1]) for l in v["links"]}
        if w["chains"] is not None:
            for j, chain in enumerate(w["chains"]):
                if len(chain) < 2:
                    raise ScenarioError(f"{where}.chains[{j}]", "a chain needs at least two instances")
                for a, b in zip(chain, chain[1:]):
                    if (a, b) not in pairs:
                        raise ScenarioError(f"{where}.chains[{j}]", f"no virtual link {a}->{b}")
            w["chains"] = [list(c) for c in w["chains"]]
        out.append(w)
    return out


def _parse_orders(orders: dict, ids: set) -> dict:
    out = {}
    for name, groups in orders.items():
        seen = []
        for g, grp in enumerate(groups):
            for m in grp:
                if m not in ids:
                    raise ScenarioError(f"orders.{name}[{g}]", f"unknown migration {m!r}")
                seen.append(m)
        if sorted(seen) != sorted(ids):
            raise ScenarioError(f"orders.{name}", "must list every migration exactly once")
        out[name] = [list(grp) for grp in groups]
    return out


def dump_scenario(sc: Scenario, path: str | FsPath) -> None:
    p = FsPath(path)
    data = sc.to_dict()
    if p.suffix == ".json":
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    else:
        p.write_text(yaml.safe_dump(data, sort_keys=True))



FIXTURES = FsPath(__file__).parent / "fixtures"


def fixture_path(name: str) -> FsPath:
    """Path of a bundled scenario, e.g. ``fixture_path("motivation")``."""
    p = FIXTURES / (name if name.endswith((".yaml", ".json")) else name + ".yaml")
    if not p.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return p
