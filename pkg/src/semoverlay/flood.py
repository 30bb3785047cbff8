"""Gnutella-like low-level overlay with proximity-based sub-clusters.

A flooding cluster is partitioned into sub-clusters, the leaves of a binary
split tree whose ids are bit strings.  Oversized sub-clusters are split at
the coordinate median; undersized ones are merged back.  A search first
jumps through gateways into every neighbouring sub-tree, then floods its own
sub-cluster, so all sub-clusters are searched in parallel.
"""
from __future__ import annotations

import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

from .engine import QUERY, RESPONSE, Future
from .errors import NothingToMergeWith, SplitUnderflow
from .identity import PeerId
from .semantics import TriplePattern


@dataclass
class SubCluster:
    id: str
    members: set = field(default_factory=set)
    gateways: dict = field(default_factory=dict)


@dataclass
class FloodState:
    pid: PeerId
    coord: tuple
    neighbors: set = field(default_factory=set)
    sub_id: str = ""
    gateways: dict = field(default_factory=dict)
    index: set = field(default_factory=set)
    version: int = -1
    window: int = 1024
    seen: OrderedDict = field(default_factory=OrderedDict)

    def remember(self, qid) -> bool:
        """Record a query id; False if it was already seen."""
        if qid in self.seen:
            return False
        self.seen[qid] = None
        if len(self.seen) > self.window:
            self.seen.popitem(last=False)
        return True


def _flip(bit: str) -> str:
    return "1" if bit == "0" else "0"


def sibling_ids(leaf_id: str) -> list[str]:
    """Roots of the sub-trees hanging off the path from the root to ``leaf_id``."""
    return [leaf_id[:j] + _flip(leaf_id[j]) for j in range(len(leaf_id))]


def split_plane(members, coords) -> tuple[int, list, float]:
    members = sorted(members)
    spreads = []
    for axis in (0, 1):
        vals = [coords[p][axis] for p in members]
        spreads.append(max(vals) - min(vals))
    axis = 0 if spreads[0] >= spreads[1] else 1
    order = sorted(members, key=lambda p: (coords[p][axis], coords[p][1 - axis], p))
    cut = math.ceil(len(order) / 2)
    threshold = (coords[order[cut - 1]][axis] + coords[order[cut]][axis]) / 2
    return axis, order, threshold


def split_subcluster(sc: SubCluster, coords, max_size: int = 32, min_size: int = 4):
    """Median split along the axis of larger spread; lower half gets the odd member."""
    if len(sc.members) <= max_size:
        raise ValueError(f"sub-cluster {sc.id!r} has {len(sc.members)} <= {max_size} members")
    _, order, _ = split_plane(sc.members, coords)
    cut = math.ceil(len(order) / 2)
    lower, upper = order[:cut], order[cut:]
    if len(upper) < min_size:
        raise SplitUnderflow(f"splitting {len(order)} members would leave a child below {min_size}")
    left = SubCluster(sc.id + "0", set(lower), {**sc.gateways, sc.id + "1": upper[0]})
    right = SubCluster(sc.id + "1", set(upper), {**sc.gateways, sc.id + "0": lower[-1]})
    return left, right


def merge_subcluster(sc: SubCluster, tree: dict, min_size: int = 4) -> SubCluster:
    """Merge ``sc`` into the nearest leaf of its sibling sub-tree.

    ``tree`` maps leaf id -> SubCluster and is not modified.  The merged
    sub-cluster takes the parent id when the sibling sub-tree is a single
    leaf, and the absorbing leaf's id otherwise.
    """
    others = [lid for lid in tree if lid != sc.id]
    if not others:
        raise NothingToMergeWith(f"sub-cluster {sc.id!r} is the only one")
    for j in range(len(sc.id) - 1, -1, -1):
        sib = sc.id[:j] + _flip(sc.id[j])
        cands = sorted((lid for lid in others if lid.startswith(sib)), key=lambda x: (len(x), x))
        if cands:
            break
    else:  # pragma: no cover - a prefix-free leaf set always has a sibling
        raise NothingToMergeWith(f"no sibling sub-tree for {sc.id!r}")
    target = tree[cands[0]]
    new_id = sc.id[:j] if len(cands) == 1 else target.id
    return SubCluster(new_id, set(sc.members) | set(target.members), {})


def _components(adj, members) -> list[list]:
    seen, comps = set(), []
    for start in members:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in sorted(adj[u]):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def repair_graph(members, neighbors: dict, c: int, rng) -> dict:
    """Top every member up to min(c, |members|-1) neighbours and reconnect."""
    members = sorted(members)
    memberset = set(members)
    adj = {p: (set(neighbors.get(p, ())) & memberset) - {p} for p in members}
    for p in members:
        for q in list(adj[p]):
            adj[q].add(p)
    target = min(c, len(members) - 1)
    cap = 2 * c
    for p in members:
        while len(adj[p]) < target:
            cands = [q for q in members if q != p and q not in adj[p] and len(adj[q]) < cap]
            if not cands:
                cands = [q for q in members if q != p and q not in adj[p]]
            if not cands:
                break
            q = rng.choice(cands)
            adj[p].add(q)
            adj[q].add(p)
    comps = _components(adj, members)
    while len(comps) > 1:
        a = min(comps[0], key=lambda p: (len(adj[p]), p))
        b = min(comps[1], key=lambda p: (len(adj[p]), p))
        adj[a].add(b)
        adj[b].add(a)
        comps = [comps[0] + comps[1]] + comps[2:]
    return adj


def _centroid(pids, coords):
    pids = list(pids)
    return (sum(coords[p][0] for p in pids) / len(pids), sum(coords[p][1] for p in pids) / len(pids))


class FloodCluster:
    """Directory-side view of one flooding cluster: split tree and graph.

    Peers hold their own copies (``FloodState``) which are refreshed by
    maintenance messages carrying ``version`` numbers.
    """

    def __init__(self, name: str, max_size: int = 32, min_size: int = 4, c: int = 4, rng=None):
        if max_size < 2 * min_size:
            raise ValueError("max_size must be at least twice min_size")
        self.name = name
        self.max_size, self.min_size, self.c = max_size, min_size, c
        self.rng = rng
        self.leaves: dict[str, SubCluster] = {"": SubCluster("")}
        self.planes: dict[str, tuple[int, float]] = {}
        self.adj: dict[PeerId, set] = {}
        self.coords: dict[PeerId, tuple] = {}
        self.version = 0
        self.splits = 0
        self.merges = 0

    @property
    def members(self) -> set:
        return set(self.coords)

    def leaf_of(self, pid: PeerId) -> str:
        for lid, sc in self.leaves.items():
            if pid in sc.members:
                return lid
        raise KeyError(pid)

    def sizes(self) -> dict:
        return {lid: len(sc.members) for lid, sc in sorted(self.leaves.items())}

    def _descend(self, coord) -> str:
        node = ""
        while node not in self.leaves:
            axis, thr = self.planes[node]
            first = node + ("0" if coord[axis] <= thr else "1")
            other = node + ("1" if first.endswith("0") else "0")
            node = first if any(lid.startswith(first) for lid in self.leaves) else other
        return node

    def add(self, pid: PeerId, coord) -> None:
        self.coords[pid] = tuple(coord)
        lid = self._descend(coord)
        sc = self.leaves[lid]
        sc.members.add(pid)
        self._rewire(sc)
        if len(sc.members) > self.max_size:
            self._split(lid)
        self._refresh_gateways()
        self.version += 1

    def remove(self, pid: PeerId) -> None:
        if pid not in self.coords:
            return
        lid = self.leaf_of(pid)
        sc = self.leaves[lid]
        sc.members.discard(pid)
        del self.coords[pid]
        for nb in self.adj.pop(pid, set()):
            self.adj.get(nb, set()).discard(pid)
        if len(sc.members) < self.min_size and len(self.leaves) > 1:
            self._merge(lid)
        elif sc.members:
            self._rewire(sc)
        self._refresh_gateways()
        self.version += 1

    def _rewire(self, sc: SubCluster) -> None:
        adj = repair_graph(sc.members, {p: self.adj.get(p, set()) for p in sc.members}, self.c, self.rng)
        self.adj.update(adj)

    def _split(self, lid: str) -> None:
        sc = self.leaves[lid]
        axis, _, thr = split_plane(sc.members, self.coords)
        left, right = split_subcluster(sc, self.coords, self.max_size, self.min_size)
        del self.leaves[lid]
        self.leaves[left.id], self.leaves[right.id] = left, right
        self.planes[lid] = (axis, thr)
        self.splits += 1
        for child in (left, right):
            self._rewire(child)
            if len(child.members) > self.max_size:
                self._split(child.id)

    def _merge(self, lid: str) -> None:
        sc = self.leaves[lid]
        merged = merge_subcluster(sc, self.leaves, self.min_size)
        absorbed = [x for x in self.leaves if x != lid and x.startswith(merged.id)
                    and self.leaves[x].members <= merged.members]
        for x in [lid] + absorbed:
            del self.leaves[x]
        if merged.id in self.leaves:  # pragma: no cover - guarded by prefix-freeness
            raise RuntimeError("merge produced a duplicate leaf id")
        self.leaves[merged.id] = merged
        for key in list(self.planes):
            if not any(lid.startswith(key) and lid != key for lid in self.leaves):
                del self.planes[key]
        self.merges += 1
        self._rewire(merged)
        if len(merged.members) > self.max_size:
            self._split(merged.id)

    def _refresh_gateways(self) -> None:
        subtree_members: dict[str, list] = {}

        def members_under(prefix):
            if prefix not in subtree_members:
                out = set()
                for lid, sc in self.leaves.items():
                    if lid.startswith(prefix):
                        out |= sc.members
                subtree_members[prefix] = sorted(out)
            return subtree_members[prefix]

        for lid, sc in self.leaves.items():
            fresh = {}
            centre = _centroid(sc.members, self.coords) if sc.members else (0.5, 0.5)
            for sib in sibling_ids(lid):
                pool = members_under(sib)
                if not pool:
                    continue
                old = sc.gateways.get(sib)
                if old is not None and old in self.coords and old in pool:
                    fresh[sib] = old
                else:
                    fresh[sib] = min(pool, key=lambda p: (math.dist(self.coords[p], centre), p))
            sc.gateways = fresh

    def view(self, pid: PeerId) -> tuple:
        """What peer ``pid`` should currently believe: (sub id, neighbours, gateways)."""
        lid = self.leaf_of(pid)
        return lid, frozenset(self.adj.get(pid, ())), dict(self.leaves[lid].gateways)

    def intra_edges(self) -> int:
        return sum(len(v) for v in self.adj.values()) // 2


# -- parallel flooding ---------------------------------------------------

class FloodRun:
    """Bookkeeping for one flood; ``done`` fires when no message is in flight."""

    def __init__(self, net, qid, origin: PeerId, q: TriplePattern):
        self.net, self.qid, self.origin, self.q = net, qid, origin, q
        self.cluster = net.peers[origin].home
        self.results: set = set()
        self.reached: Counter = Counter()
        self.query_messages = 0
        self.response_messages = 0
        self.gateway_messages = 0
        self.suppressed = 0
        self.pending = 0
        self.done = Future()

    @property
    def messages(self) -> int:
        return self.query_messages + self.response_messages

    @property
    def duplicate_deliveries(self) -> int:
        return sum(n - 1 for n in self.reached.values() if n > 1)

    def _send(self, src, dst, tag, handler, on_drop=None):
        self.pending += 1

        def delivered():
            handler()
            self._settle()

        def dropped():
            if on_drop is not None:
                on_drop()
            self._settle()

        self.net.send(src, dst, tag, delivered, dropped)

    def _enter(self, src, gw, ttl, scope, retries=2):
        self.query_messages += 1
        self.gateway_messages += 1

        def lost():
            self.net.report_dead(gw, by=src)
            alt = self.net.gateway_for(self.cluster, scope, src)
            if alt is not None and retries > 0 and self.net.is_alive(src):
                self._enter(src, alt, ttl, scope, retries - 1)

        self._send(src, gw, QUERY, lambda: self.visit(gw, src, ttl - 1, scope), lost)

    def _settle(self):
        self.pending -= 1
        if self.pending == 0:
            self.done.set_result(self)

    def visit(self, pid: PeerId, sender, ttl: int, scope: str | None):
        """Handle the query at ``pid``; ``scope`` is set when entering a sub-tree."""
        st = self.net.flood_state(pid)
        if st is None:
            return
        if not st.remember(self.qid):
            self.suppressed += 1
            return
        self.reached[pid] += 1
        hits = {t for t in self.net.peers[pid].repository if self.q.matches(t)}
        hits |= {e for e in st.index if self.q.matches(e.triple)}
        if hits:
            if pid == self.origin:
                self.results |= hits
            else:
                self.response_messages += 1
                self._send(pid, self.origin, RESPONSE, lambda: self.results.update(hits))
        if ttl <= 0:
            return
        if scope is not None:
            for sib in sorted(st.gateways):
                if sib.startswith(scope) and len(sib) > len(scope):
                    self._enter(pid, st.gateways[sib], ttl, sib)
        for nb in sorted(st.neighbors):
            if nb != sender:
                self.query_messages += 1
                self._send(pid, nb, QUERY, lambda nb=nb: self.visit(nb, pid, ttl - 1, None),
                           lambda nb=nb: self.net.report_dead(nb, by=pid))


def parallel_flood_proc(net, entry: PeerId, q: TriplePattern, qid, ttl: int = 16, origin: PeerId | None = None):
    run = FloodRun(net, qid, entry if origin is None else origin, q)
    run.cluster = net.peers[entry].home
    run.visit(entry, None, ttl, "")
    if run.pending:
        yield run.done
    return run


def parallel_flood(net, entry: PeerId, q: TriplePattern, qid, ttl: int = 16) -> FloodRun:
    return net.run_process(net.spawn(parallel_flood_proc(net, entry, q, qid, ttl), at=entry))
