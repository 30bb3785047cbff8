"""Top-level ring of semantic clusters.

Clusters sit on an ``m``-bit ring ordered by the hash of their name.  Every
peer keeps short-range contacts (its own cluster and the two ring-adjacent
clusters) and ``q`` long-range contacts drawn with probability proportional
to ``1/d``.  Queries move between clusters by greedy sid comparison.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .engine import FAILED, MAINTENANCE, QUERY
from .errors import NoContacts, ValidationError
from .identity import ClusterKey, IdParams, PeerId, ring_distance
from .semantics import DEFAULT_CLUSTER, Ontology, Triple, clusters_of_triple

CHORD, FLOOD = "chord", "flood"
DELIVER = "deliver"
LONG_RANGE_RETRIES = 16


@dataclass
class ContactTable:
    short_range: list = field(default_factory=list)
    long_range: list = field(default_factory=list)
    successor: PeerId | None = None  # short-range contact in the ring-successor direction

    def all(self) -> list:
        return list(dict.fromkeys(self.short_range + self.long_range))

    def discard(self, pid: PeerId) -> None:
        self.short_range = [p for p in self.short_range if p != pid]
        self.long_range = [p for p in self.long_range if p != pid]
        if self.successor == pid:
            self.successor = None


@dataclass
class ClusterInfo:
    key: ClusterKey
    overlay_kind: str
    member_count: int = 0


@dataclass(frozen=True, order=True)
class IndexEntry:
    triple: Triple
    owner: PeerId

    def __str__(self):
        return f"index({self.triple} @ {self.owner})"


class ClusterDirectory:
    """Name -> key/overlay kind for every cluster, plus current membership.

    The directory doubles as the bootstrap service new peers consult.
    """

    def __init__(self, names, kinds: dict, params: IdParams = IdParams(), default_kind: str = FLOOD):
        self.params = params
        self.entries: dict[str, ClusterInfo] = {}
        self.members: dict[str, set] = {}
        by_key: dict[int, str] = {}
        for name in sorted(set(names)):
            key = ClusterKey.of(name, params)
            if key.value in by_key:
                raise ValidationError(
                    f"cluster key collision: {by_key[key.value]!r} and {name!r} both hash to {key.value:#x}")
            by_key[key.value] = name
            kind = kinds.get(name, default_kind)
            if kind not in (CHORD, FLOOD):
                raise ValidationError(f"unknown overlay kind {kind!r} for {name}")
            self.entries[name] = ClusterInfo(key, kind)
            self.members[name] = set()
        self.by_sid = by_key
        self.ring = [by_key[k] for k in sorted(by_key)]

    def key(self, name: str) -> ClusterKey:
        return self.entries[name].key

    def kind(self, name: str) -> str:
        return self.entries[name].overlay_kind

    def cluster_of(self, pid: PeerId) -> str:
        return self.by_sid[pid.sid]

    def add_member(self, name: str, pid: PeerId) -> None:
        self.members[name].add(pid)
        self.entries[name].member_count = len(self.members[name])

    def remove_member(self, name: str, pid: PeerId) -> None:
        self.members[name].discard(pid)
        self.entries[name].member_count = len(self.members[name])


def place_peer(local_data, o: Ontology) -> tuple[str, dict]:
    """Home cluster = the one covering most of the peer's triples."""
    by_cluster: dict[str, set] = {}
    for t in local_data:
        for c in clusters_of_triple(o, t):
            by_cluster.setdefault(c, set()).add(t)
    if not by_cluster:
        return DEFAULT_CLUSTER, {}
    home = min(by_cluster, key=lambda c: (-len(by_cluster[c]), c))
    foreign = {c: ts for c, ts in by_cluster.items() if c != home}
    return home, foreign


def long_range_weights(own: str, directory: ClusterDirectory) -> tuple[list, list]:
    """Clusters other than ``own`` with their normalized 1/d selection probabilities."""
    m = directory.params.m
    own_key = directory.key(own).value
    names = [c for c in directory.ring if c != own]
    raw = [1.0 / ring_distance(own_key, directory.key(c).value, m) for c in names]
    total = sum(raw)
    return names, [w / total for w in raw]


def draw_long_range_cluster(names, cum_weights, rng) -> str:
    return rng.choices(names, cum_weights=cum_weights)[0]


def build_contacts(self_id: PeerId, directory: ClusterDirectory, membership: dict, q: int, rng) -> ContactTable:
    own = directory.cluster_of(self_id)

    def others(c):
        return sorted(membership.get(c, ()) - {self_id})

    table = ContactTable()
    mates = others(own)
    if mates:
        table.short_range.append(rng.choice(mates))
    ring = [c for c in directory.ring if c == own or others(c)]
    if len(ring) > 1:
        i = ring.index(own)
        succ_c, pred_c = ring[(i + 1) % len(ring)], ring[i - 1]
        succ = rng.choice(others(succ_c))
        table.short_range.append(succ)
        table.successor = succ
        if pred_c != succ_c:
            table.short_range.append(rng.choice(others(pred_c)))
    names, weights = long_range_weights(own, directory)
    if names:
        cum = list(itertools.accumulate(weights))
        for _ in range(q):
            for _ in range(LONG_RANGE_RETRIES):
                pool = others(draw_long_range_cluster(names, cum, rng))
                if pool:
                    pick = rng.choice(pool)
                    if pick not in table.short_range and pick not in table.long_range:
                        table.long_range.append(pick)
                    break
    return table


def greedy_next_hop(current: PeerId, contacts: ContactTable, target: ClusterKey, m: int):
    if current.sid == target.value:
        return DELIVER
    candidates = contacts.all()
    if not candidates:
        raise NoContacts(f"{current} has no contacts")
    best = min(candidates, key=lambda p: (ring_distance(p.sid, target.value, m), p.packed))
    if ring_distance(best.sid, target.value, m) < ring_distance(current.sid, target.value, m):
        return best
    if contacts.successor is not None:
        return contacts.successor
    raise NoContacts(f"{current} is stuck and has no ring-successor contact")


@dataclass
class RouteResult:
    src: PeerId
    target: str
    path: list
    delivered: bool
    error: str | None = None

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def record(self, query_id) -> dict:
        return {"type": "route", "query_id": query_id, "src": str(self.src), "target_cluster": self.target,
                "hops": self.hops, "delivered": self.delivered, "path_len": len(self.path)}


def route_proc(net, src: PeerId, target: str, ttl: int | None = None, tag: str = QUERY):
    """Process: greedy forwarding from ``src`` until a peer of ``target`` holds the message."""
    directory = net.directory
    if ttl is None:
        ttl = 4 * len(directory.ring)
    key, m = directory.key(target), directory.params.m
    cur, path = src, [src]
    if not directory.members[target] and cur.sid != key.value:
        return RouteResult(src, target, path, False, "EmptyCluster")
    while True:
        try:
            nxt = greedy_next_hop(cur, net.peers[cur].contacts, key, m)
        except NoContacts:
            net.rebuild_contacts(cur)
            try:
                nxt = greedy_next_hop(cur, net.peers[cur].contacts, key, m)
            except NoContacts:
                return RouteResult(src, target, path, False, "NoContacts")
        if nxt == DELIVER:
            return RouteResult(src, target, path, True)
        if nxt in path:
            # revisiting a peer means some table on the way is stale
            net.rebuild_contacts(cur)
            try:
                nxt = greedy_next_hop(cur, net.peers[cur].contacts, key, m)
            except NoContacts:
                return RouteResult(src, target, path, False, "NoContacts")
        if len(path) - 1 >= ttl:
            return RouteResult(src, target, path, False, "TtlExceeded")
        ok = yield net.forward(cur, nxt, tag)
        if ok is FAILED:
            net.report_dead(nxt, by=cur)
            net.rebuild_contacts(cur)
            continue
        cur = nxt
        path.append(cur)


def route_to_cluster(net, src: PeerId, target: str, ttl: int | None = None) -> RouteResult:
    return net.run_process(net.spawn(route_proc(net, src, target, ttl), at=src))


def register_proc(net, owner: PeerId, foreign: dict):
    """Process: route to each foreign cluster and store index entries there.

    Returns the number of stored entries (pair keys for chord clusters,
    one per triple for flood clusters).  Unroutable clusters are left in the
    owner's pending set for a later retry.
    """
    stored = 0
    for cluster in sorted(foreign):
        items = sorted(IndexEntry(t, owner) for t in foreign[cluster])
        if not net.directory.members[cluster]:
            net.peers[owner].pending.setdefault(cluster, set()).update(items)
            continue
        net_proc = net.spawn(route_proc(net, owner, cluster, tag=MAINTENANCE), at=owner)
        route = yield net_proc
        if route is FAILED or not route.delivered:
            if net.is_alive(owner):
                net.peers[owner].pending.setdefault(cluster, set()).update(items)
            continue
        placed = yield net.spawn(net.store_in_cluster(route.path[-1], cluster, items, owner),
                                 at=route.path[-1])
        if placed is FAILED or placed is None:
            placed = []
        stored += len(placed)
        if net.is_alive(owner):
            peer = net.peers[owner]
            for key, item, holder in placed:
                peer.placements[(cluster, key, item)] = holder
            leftover = set(items) - {item for _, item, _ in placed}
            if leftover:
                peer.pending.setdefault(cluster, set()).update(leftover)
    return stored


def register_foreign_indices(owner: PeerId, foreign: dict, net) -> int:
    if not foreign:
        return 0
    return net.run_process(net.spawn(register_proc(net, owner, foreign), at=owner))

