"""Scenario configuration, workload synthesis, query execution and reports."""
from __future__ import annotations

import json
import math
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path

from . import chord
from .engine import FAILED, QUERY, RESPONSE, all_of
from .errors import ConfigError, JoinFailed, LookupFailed, OverlayError, UnknownProperty, UnsupportedPattern
from .flood import parallel_flood_proc
from .identity import IdParams, PeerId
from .semantics import (DATATYPE_PROPERTY, DEFAULT_CLUSTER, OBJECT_PROPERTY, UPPER, Ontology, PropertySpec,
                        Term, Triple, TriplePattern, clusters_of_pattern, clusters_of_triple, load_ontology,
                        parse_query, render_query)
from .simnet import NetConfig, Network
from .toplevel import CHORD, FLOOD, IndexEntry, route_proc

SHAPES = ("spo", "sp?", "s?o", "?po", "s??", "?p?", "??o")
DEFAULT_MIX = {"sp?": 0.5, "?po": 0.4, "spo": 0.1}


# -- configuration -------------------------------------------------------

@dataclass
class GeneratorSpec:
    peer_count: int = 20
    triples_per_peer: int = 5
    cluster_skew: str = "zipf"
    zipf_s: float = 0.8
    foreign_fraction: float = 0.0
    clusters: list | None = None
    reserve_peers: int = 0
    instances_per_cluster: int = 20
    literal_values: int = 50


@dataclass
class OverlaySpec:
    default: str = FLOOD
    clusters: dict = field(default_factory=dict)


@dataclass
class IdSpec:
    m: int = 16
    n: int = 48


@dataclass
class FloodParams:
    max_size: int = 32
    min_size: int = 4
    c: int = 4
    ttl: int = 16


@dataclass
class ChordParams:
    s: int = 3
    t_stab: float = 500.0
    bits: int = 16


@dataclass
class ChurnSpec:
    rate: float = 0.0  # events per simulated second
    duration: float = 0.0  # simulated seconds
    mix: dict = field(default_factory=lambda: {"join": 0.5, "graceful": 0.8})


@dataclass
class WorkloadSpec:
    query_count: int = 50
    pattern_mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    interval_ms: float = 100.0


@dataclass
class MaintenanceSpec:
    ping_ms: float = 1000.0
    refresh_ms: float = 2000.0


@dataclass
class ScenarioConfig:
    ontology_path: str | None = None
    dataset_path: str | None = None
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    overlay_kind: OverlaySpec = field(default_factory=OverlaySpec)
    id_params: IdSpec = field(default_factory=IdSpec)
    q: int = 2
    flood: FloodParams = field(default_factory=FloodParams)
    chord: ChordParams = field(default_factory=ChordParams)
    churn: ChurnSpec = field(default_factory=ChurnSpec)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    maintenance: MaintenanceSpec = field(default_factory=MaintenanceSpec)
    seed: int = 0
    base_dir: str = field(default=".", repr=False)

    @property
    def params(self) -> IdParams:
        return IdParams(self.id_params.m, self.id_params.n)

    def net_config(self) -> NetConfig:
        return NetConfig(
            params=self.params, q=self.q, chord_bits=self.chord.bits, chord_s=self.chord.s,
            t_stab=self.chord.t_stab, flood_max=self.flood.max_size, flood_min=self.flood.min_size,
            flood_c=self.flood.c, flood_ttl=self.flood.ttl, t_ping=self.maintenance.ping_ms,
            refresh_ms=self.maintenance.refresh_ms)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return _dump(self)


def _snake(key: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", key).lower()


def _camel(name: str) -> str:
    if name == "t_stab":
        return "T_stab"
    head, *rest = name.split("_")
    return head + "".join(w[:1].upper() + w[1:] for w in rest)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls) if f.name != "base_dir"}
    kwargs = {}
    for key, value in doc.items():
        name = _snake(key)
        if name not in known:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            value = _build(type(default), value, key)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _dump(obj):
    if is_dataclass(obj):
        return {_camel(f.name): _dump(getattr(obj, f.name)) for f in fields(obj) if f.name != "base_dir"}
    return obj


def config_from_dict(doc: dict, base_dir: str = ".") -> ScenarioConfig:
    cfg = _build(ScenarioConfig, doc, "")
    cfg.base_dir = str(base_dir)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc, path.parent)


def bundled(name: str) -> Path:
    return Path(str(resources.files("semoverlay") / "data" / name))


def load_scenario_ontology(cfg: ScenarioConfig) -> Ontology:
    path = cfg.resolve(cfg.ontology_path) if cfg.ontology_path else bundled("socam.json")
    if not path.exists() and cfg.ontology_path and bundled(Path(cfg.ontology_path).name).exists():
        path = bundled(Path(cfg.ontology_path).name)  # bare names may refer to a shipped ontology
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read ontology {path}: {exc}") from None
    return load_ontology(text)


def validate_config(cfg: ScenarioConfig, o: Ontology) -> None:
    known = set(o.leaves) | {DEFAULT_CLUSTER}
    refs = list(cfg.overlay_kind.clusters) + list(cfg.generator.clusters or [])
    unknown = sorted(set(refs) - known)
    if unknown:
        raise ConfigError(f"unknown clusters {unknown}; leaves are {sorted(o.leaves)}")
    for name, kind in [("default", cfg.overlay_kind.default), *cfg.overlay_kind.clusters.items()]:
        if kind not in (CHORD, FLOOD):
            raise ConfigError(f"overlay kind for {name} must be chord or flood, got {kind!r}")
    bad = sorted(set(cfg.workload.pattern_mix) - set(SHAPES))
    if bad:
        raise ConfigError(f"unknown pattern shapes {bad}; use {list(SHAPES)}")
    if cfg.workload.pattern_mix and sum(cfg.workload.pattern_mix.values()) <= 0:
        raise ConfigError("pattern mix weights must sum to a positive value")
    if cfg.generator.cluster_skew not in ("zipf", "uniform"):
        raise ConfigError(f"clusterSkew must be zipf or uniform, got {cfg.generator.cluster_skew!r}")
    if not 0 <= cfg.generator.foreign_fraction <= 1:
        raise ConfigError("foreignFraction must lie in [0, 1]")
    if cfg.generator.peer_count < 0 or cfg.generator.triples_per_peer < 0 or cfg.workload.query_count < 0:
        raise ConfigError("counts must be non-negative")
    if cfg.q < 0 or cfg.churn.rate < 0 or cfg.churn.duration < 0:
        raise ConfigError("q and churn parameters must be non-negative")
    if cfg.flood.max_size < 2 * cfg.flood.min_size:
        raise ConfigError("flood.maxSize must be at least twice flood.minSize")
    try:
        cfg.params
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- workload ------------------------------------------------------------

@dataclass
class Workload:
    ontology: Ontology
    peers: list  # [(address, set of Triple)]
    reserve: list
    queries: list  # query texts

    def to_dict(self) -> dict:
        base = set(self.ontology.instance_class)
        return {
            "instances": {i: self.ontology.instance_class[i] for i in sorted(base)},
            "peers": [{"address": a, "triples": sorted(str(t) for t in ts)} for a, ts in self.peers],
            "reserve": [{"address": a, "triples": sorted(str(t) for t in ts)} for a, ts in self.reserve],
            "queries": list(self.queries),
        }


def address_of(i: int) -> str:
    return f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}"


def cluster_weights(clusters, skew: str, s: float) -> list[float]:
    if skew == "uniform":
        raw = [1.0] * len(clusters)
    else:
        raw = [1.0 / (k ** s) for k in range(1, len(clusters) + 1)]
    total = sum(raw)
    return [w / total for w in raw]


def _generators(o: Ontology) -> dict:
    """Per leaf cluster, the properties that can yield a triple landing only there."""
    below = o._leaves_below
    out = defaultdict(list)
    for name, spec in sorted(o.properties.items()):
        if spec.kind == DATATYPE_PROPERTY:
            for leaf in sorted(set().union(*(below[c] for c in spec.domains)) if spec.domains else ()):
                out[leaf].append(name)
        else:
            for leaf in sorted(set().union(*(below[c] for c in spec.ranges))):
                out[leaf].append(name)
    return out


def _instance(cluster: str, k: int) -> str:
    return f"gen:{cluster}_{k}"


def _make_triple(o: Ontology, cluster: str, gens: dict, g: GeneratorSpec, rng) -> Triple:
    name = rng.choice(gens[cluster])
    spec = o.properties[name]
    if spec.kind == DATATYPE_PROPERTY:
        subj = _instance(cluster, rng.randrange(g.instances_per_cluster))
        obj = Term.literal(f"{cluster.lower()}-{rng.randrange(g.literal_values)}")
    else:
        below = o._leaves_below
        domain = sorted(set().union(*(below[c] for c in spec.domains))) if spec.domains else sorted(o.leaves)
        subj = _instance(rng.choice(domain), rng.randrange(g.instances_per_cluster))
        obj = Term.iri(_instance(cluster, rng.randrange(g.instances_per_cluster)))
    return Triple(Term.iri(subj), Term.iri(name), obj)


def pattern_from(t: Triple, shape: str) -> TriplePattern:
    names = ("s", "p", "o")
    terms = [Term.var(names[i]) if shape[i] == "?" else x for i, x in enumerate((t.subject, t.predicate, t.object))]
    return TriplePattern(*terms)


def sample_query(triples: list, mix: dict, rng) -> str:
    t = rng.choice(triples)
    shapes = sorted(mix)
    shape = rng.choices(shapes, weights=[mix[s] for s in shapes])[0]
    return render_query(pattern_from(t, shape))


def generate_workload(cfg: ScenarioConfig, o: Ontology, rng) -> Workload:
    g = cfg.generator
    gens = _generators(o)
    clusters = list(g.clusters) if g.clusters else [c for c in o.leaves if gens.get(c)]
    missing = [c for c in clusters if c not in o.leaves]
    if missing:
        raise ConfigError(f"unknown generator clusters {missing}")
    empty = [c for c in clusters if not gens.get(c)]
    if empty:
        raise ConfigError(f"no property can produce triples for clusters {empty}")
    if not clusters and g.peer_count:
        raise ConfigError("no cluster can hold generated data")
    weights = cluster_weights(clusters, g.cluster_skew, g.zipf_s)
    instances = {_instance(c, k): c for c in o.leaves for k in range(g.instances_per_cluster)}
    o = o.with_instances(instances)

    def dataset():
        home = rng.choices(clusters, weights=weights)[0]
        others = [c for c in clusters if c != home]
        out = set()
        for _ in range(g.triples_per_peer):
            c = home
            if others and rng.random() < g.foreign_fraction:
                c = rng.choice(others)
            out.add(_make_triple(o, c, gens, g, rng))
        return out

    peers = [(address_of(i + 1), dataset()) for i in range(g.peer_count)]
    reserve = [(address_of(g.peer_count + i + 1), dataset()) for i in range(g.reserve_peers)]
    pool = sorted(set().union(*(ts for _, ts in peers))) if peers else []
    mix = cfg.workload.pattern_mix or DEFAULT_MIX
    queries = [sample_query(pool, mix, rng) for _ in range(cfg.workload.query_count)] if pool else []
    return Workload(o, peers, reserve, queries)


def load_workload(path, o: Ontology) -> Workload:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        o = o.with_instances(doc.get("instances", {}))

        def peers(key):
            return [(p["address"], {Triple.parse(x) for x in p["triples"]}) for p in doc.get(key, [])]

        return Workload(o, peers("peers"), peers("reserve"), list(doc.get("queries", [])))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None


def synthetic_ontology(n_clusters: int, prefix: str = "C") -> Ontology:
    """``n_clusters`` flat upper classes, each with one datatype property and instances."""
    classes = [f"{prefix}{i:03d}" for i in range(n_clusters)]
    return Ontology(
        frozenset(classes), {}, {c: UPPER for c in classes},
        {f"syn:{c}_attr": PropertySpec(DATATYPE_PROPERTY, frozenset([c])) for c in classes},
        {f"syn:{c}_{k}": c for c in classes for k in range(4)})


def synthetic_triple(cluster: str, k: int) -> Triple:
    return Triple(Term.iri(f"syn:{cluster}_{k % 4}"), Term.iri(f"syn:{cluster}_attr"), Term.literal(str(k)))


# -- query execution -----------------------------------------------------

@dataclass
class QueryOutcome:
    query_id: int
    origin: PeerId
    text: str
    phase: str = "static"
    clusters: list = field(default_factory=list)
    routes: list = field(default_factory=list)
    results: set = field(default_factory=set)
    expected: set = field(default_factory=set)
    intra_messages: int = 0
    deref_messages: int = 0
    unsupported: bool = False
    aborted: bool = False
    errors: list = field(default_factory=list)
    issued: float = 0.0
    finished: float = 0.0

    @property
    def delivered(self) -> bool:
        if self.aborted:
            return False
        return all(r.delivered for r in self.routes if r.error != "EmptyCluster")

    @property
    def hops(self) -> int:
        return sum(r.hops for r in self.routes)

    @property
    def recall(self) -> float:
        if not self.expected:
            return 1.0
        return len(self.results & self.expected) / len(self.expected)

    @property
    def precision(self) -> float:
        if not self.results:
            return 1.0
        return len(self.results & self.expected) / len(self.results)

    def record(self) -> dict:
        return {
            "type": "query", "query_id": self.query_id, "phase": self.phase, "time": round(self.issued, 3),
            "origin": str(self.origin), "text": self.text, "clusters": list(self.clusters),
            "hops": self.hops, "intra_messages": self.intra_messages, "deref_messages": self.deref_messages,
            "results": len(self.results), "expected": len(self.expected),
            "recall": round(self.recall, 6), "precision": round(self.precision, 6),
            "delivered": self.delivered, "latency": round(self.finished - self.issued, 3),
            "unsupported": self.unsupported, "aborted": self.aborted, "errors": list(self.errors),
        }

    def route_records(self) -> list[dict]:
        return [r.record(self.query_id) for r in sorted(self.routes, key=lambda r: r.target)]


def global_scan(net: Network, pattern: TriplePattern) -> set:
    out = set()
    for pid in net.live_peers():
        out |= {t for t in net.peers[pid].repository if pattern.matches(t)}
    return out


def _cluster_search(net: Network, origin: PeerId, cluster: str, pattern, out: QueryOutcome):
    route = yield from route_proc(net, origin, cluster, tag=QUERY)
    out.routes.append(route)
    if not route.delivered:
        if route.error != "EmptyCluster":
            out.errors.append(f"{cluster}: {route.error}")
        return set()
    entry = route.path[-1]
    if net.directory.kind(cluster) == CHORD:
        try:
            items, hops, holder = yield from chord.lookup_pattern_proc(net, entry, pattern, QUERY)
        except UnsupportedPattern:
            out.unsupported = True
            out.errors.append(f"{cluster}: UnsupportedPattern")
            return set()
        except LookupFailed:
            out.errors.append(f"{cluster}: LookupFailed")
            return set()
        out.intra_messages += hops
        if holder != origin:
            out.intra_messages += 1
            yield net.forward(holder, origin, RESPONSE)
        return items
    run = yield net.spawn(parallel_flood_proc(net, entry, pattern, (out.query_id, cluster),
                                              net.config.flood_ttl, origin=origin), at=entry)
    if run is FAILED:
        out.errors.append(f"{cluster}: flood aborted")
        return set()
    out.intra_messages += run.messages
    return run.results


def _fetch(net: Network, owner: PeerId, triples):
    repo = net.peers[owner].repository
    return [t for t in triples if t in repo]


def _deref(net: Network, origin: PeerId, owner: PeerId, triples, out: QueryOutcome):
    out.deref_messages += 2
    if owner == origin:
        return _fetch(net, owner, triples)
    got = yield net.rpc(origin, owner, QUERY, _fetch, net, owner, triples)
    return [] if got is FAILED else got


def query_proc(net: Network, out: QueryOutcome):
    """Process at the origin: resolve ``out.text`` across every target cluster."""
    out.issued = net.now
    pattern = parse_query(out.text)
    out.expected = global_scan(net, pattern)
    try:
        out.clusters = sorted(clusters_of_pattern(net.ontology, pattern))
    except (UnsupportedPattern, UnknownProperty) as exc:
        out.unsupported = True
        out.errors.append(type(exc).__name__)
        out.finished = net.now
        return out
    origin = out.origin
    children = [net.spawn(_cluster_search(net, origin, c, pattern, out), at=origin) for c in out.clusters]
    found = yield all_of(children)
    items = set()
    for part in found:
        if part and part is not FAILED:
            items |= part
    by_owner = defaultdict(set)
    for item in items:
        if isinstance(item, IndexEntry):
            if pattern.matches(item.triple):
                by_owner[item.owner].add(item.triple)
        elif pattern.matches(item):
            out.results.add(item)
    if by_owner:
        derefs = [net.spawn(_deref(net, origin, owner, sorted(ts), out), at=origin) for owner, ts in
                  sorted(by_owner.items())]
        fetched = yield all_of(derefs)
        for part in fetched:
            if part and part is not FAILED:
                out.results.update(part)
    out.finished = net.now
    return out


def execute_query(net: Network, origin: PeerId, text: str, query_id: int = 0, phase: str = "static") -> QueryOutcome:
    out = QueryOutcome(query_id, origin, text, phase)
    return net.run_process(net.spawn(query_proc(net, out), at=origin))


# -- scenarios -----------------------------------------------------------

@dataclass
class RunReport:
    records: list
    summary: dict
    net: Network | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return bool(self.summary.get("ok"))

    def ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def summary_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.ndjson").write_text(self.ndjson(), encoding="utf-8")
        (out / "summary.json").write_text(self.summary_json(), encoding="utf-8")


def prepare(cfg: ScenarioConfig) -> Workload:
    o = load_scenario_ontology(cfg)
    validate_config(cfg, o)
    if cfg.dataset_path:
        return load_workload(cfg.resolve(cfg.dataset_path), o)
    return generate_workload(cfg, o, random.Random(f"{cfg.seed}/workload"))


def make_network(cfg: ScenarioConfig, workload: Workload) -> Network:
    return Network(workload.ontology, dict(cfg.overlay_kind.clusters), cfg.net_config(), cfg.seed,
                   cfg.overlay_kind.default)


def join_with_retry(net: Network, address: str, dataset, attempts: int = 8) -> PeerId | None:
    for k in range(attempts):
        addr = address if k == 0 else f"{address}:{k}"
        try:
            return net.join_peer(addr, dataset)
        except JoinFailed:
            continue
    return None


def build(cfg: ScenarioConfig, workload: Workload) -> Network:
    net = make_network(cfg, workload)
    for address, dataset in workload.peers:
        join_with_retry(net, address, dataset)
    net.settle(10 * cfg.chord.t_stab)
    return net


def _p95(values) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    return float(ordered[max(0, math.ceil(0.95 * len(ordered)) - 1)])


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def summarize(records) -> dict:
    """Aggregates recomputed purely from the metric records."""
    queries = [r for r in records if r["type"] == "query"]
    routes = [r for r in records if r["type"] == "route"]
    counters = next((r for r in records if r["type"] == "counters"), None)
    route_of = defaultdict(list)
    for r in routes:
        route_of[r["query_id"]].append(r)
    phases = {}
    for phase in sorted({q["phase"] for q in queries}):
        qs = [q for q in queries if q["phase"] == phase]
        live = [q for q in qs if not q["aborted"]]
        scored = [q for q in live if not q["unsupported"]]
        hops = [r["hops"] for q in live for r in route_of[q["query_id"]] if r["delivered"]]
        phases[phase] = {
            "queries": len(qs),
            "aborted": len(qs) - len(live),
            "unsupported": sum(q["unsupported"] for q in live),
            "success_rate": round(_mean(q["delivered"] for q in scored), 6) if scored else 1.0,
            "recall": round(_mean(q["recall"] for q in scored), 6) if scored else 1.0,
            "min_recall": round(min((q["recall"] for q in scored), default=1.0), 6),
            "precision": round(_mean(q["precision"] for q in scored), 6) if scored else 1.0,
            "mean_hops": round(_mean(hops), 6),
            "p95_hops": _p95(hops),
            "mean_intra_messages": round(_mean(q["intra_messages"] for q in live), 6),
            "mean_latency_ms": round(_mean(q["latency"] for q in live), 3),
        }
    out = {"phases": phases, "churn_events": sum(r["type"] == "churn" for r in records)}
    if counters is not None:
        peer_s = counters["peer_seconds"]
        maint = counters["messages"]["maintenance"]["sent"]
        out["maintenance_per_peer_second"] = round(maint / peer_s, 6) if peer_s else 0.0
        out["messages"] = counters["messages"]
    return out


def _counters_record(net: Network) -> dict:
    return {"type": "counters", "messages": net.metrics.counters(), "sim_ms": round(net.now, 3),
            "peer_seconds": round(net.peer_seconds(), 3), "events": net.processed,
            "churn": dict(sorted(net.metrics.churn.items()))}


def run_scenario(cfg: ScenarioConfig, workload: Workload | None = None) -> RunReport:
    workload = workload if workload is not None else prepare(cfg)
    errors: list[str] = []
    net = build(cfg, workload)
    r = net.rng("origins")
    outcomes: list[QueryOutcome] = []
    next_id = [0]

    def new_outcome(text, phase):
        out = QueryOutcome(next_id[0], r.choice(net.live_peers()), text, phase)
        next_id[0] += 1
        outcomes.append(out)
        return out

    def run_now(text, phase):
        out = new_outcome(text, phase)
        res = net.run_process(net.spawn(query_proc(net, out), at=out.origin))
        if res is FAILED:
            out.aborted = True

    churn_log: list = []
    try:
        if cfg.churn.rate > 0 and cfg.churn.duration > 0:
            reserve = list(workload.reserve) or list(workload.peers)
            counter = [0]

            def new_peer():
                address, dataset = reserve[counter[0] % len(reserve)]
                counter[0] += 1
                return f"{address}/{counter[0]}", dataset

            span = cfg.churn.duration * 1000.0
            mix = cfg.churn.mix
            churn_log = net.churn(cfg.churn.rate, span, new_peer, mix.get("graceful", 0.8), mix.get("join", 0.5))
            step = span / (len(workload.queries) + 1)
            for i, text in enumerate(workload.queries):
                def issue(text=text):
                    out = new_outcome(text, "churn")
                    proc = net.spawn(query_proc(net, out), at=out.origin)
                    proc.add_callback(lambda f, out=out: setattr(out, "aborted", f.value is FAILED))
                net.schedule((i + 1) * step, issue, tag="workload")
            net.run_until(net.now + span)
            net.settle(10 * cfg.chord.t_stab)
            live_data = sorted(set().union(*(net.peers[p].repository for p in net.live_peers())))
            wr = net.rng("post-queries")
            mix = cfg.workload.pattern_mix or DEFAULT_MIX
            for _ in range(cfg.workload.query_count):
                if live_data:
                    run_now(sample_query(live_data, mix, wr), "post")
        else:
            for text in workload.queries:
                run_now(text, "static")
                net.settle(cfg.workload.interval_ms)
    except (OverlayError, RuntimeError) as exc:
        errors.append(f"{type(exc).__name__}: {exc}")

    records = []
    for out in sorted(outcomes, key=lambda o: o.query_id):
        records.extend(out.route_records())
        records.append(out.record())
    records.extend(sorted(churn_log, key=lambda c: (c["time"], c["peer"])))
    records.append(_counters_record(net))
    invariants = {
        "chord_rings": {c: net.chord_ring_ok(c) for c in net.directory.ring if net.directory.kind(c) == CHORD},
        "flood_sizes": {c: net.flood_sizes_ok(c) for c in net.directory.ring if net.directory.kind(c) == FLOOD},
    }
    conserved = net.metrics.conserved()
    summary = {
        "type": "summary", "seed": cfg.seed, "aggregates": summarize(records), "conservation": conserved,
        "clock_monotonic": not any("clock" in e for e in errors), "invariants": invariants,
        "live_peers": len(net.live_peers()), "trace_digest": net.trace_digest(), "errors": errors,
        "ok": conserved and not errors,
    }
    records.append(summary)
    return RunReport(records, summary, net)


def run_to_dir(cfg: ScenarioConfig, out_dir) -> RunReport:
    report = run_scenario(cfg)
    report.write(out_dir)
    return report


def read_records(in_dir) -> list[dict]:
    path = Path(in_dir) / "metrics.ndjson"
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def report_from_dir(in_dir) -> dict:
    records = read_records(in_dir)
    aggregates = summarize([r for r in records if r["type"] != "summary"])
    stored = next((r for r in records if r["type"] == "summary"), None)
    return {"aggregates": aggregates, "matches_summary": stored is not None and stored["aggregates"] == aggregates}

