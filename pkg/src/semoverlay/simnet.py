"""Simulated peer population running both overlay levels.

``Network`` extends the event engine with peer state, the cluster
directory, peer lifecycle (join, graceful leave, abrupt failure), periodic
maintenance timers and a Poisson churn driver.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from . import chord
from .engine import FAILED, MAINTENANCE, Simulator
from .errors import JoinFailed, LookupFailed, OverlayError
from .flood import FloodCluster, FloodState
from .identity import IdParams, PeerId, make_peer_id
from .semantics import DEFAULT_CLUSTER, Ontology, clusters_of_triple, leaf_clusters
from .toplevel import (CHORD, FLOOD, ClusterDirectory, ContactTable, IndexEntry, build_contacts,
                       place_peer, register_proc)


@dataclass
class NetConfig:
    params: IdParams = field(default_factory=IdParams)
    q: int = 2
    chord_bits: int = 16
    chord_s: int = 3
    t_stab: float = 500.0
    flood_max: int = 32
    flood_min: int = 4
    flood_c: int = 4
    flood_ttl: int = 16
    t_ping: float = 1000.0
    refresh_ms: float = 2000.0
    base_latency: float = 10.0
    alpha: float = 90.0
    timers: bool = True


@dataclass
class PeerState:
    id: PeerId
    address: str
    home: str
    coord: tuple
    repository: set
    contacts: ContactTable = field(default_factory=ContactTable)
    low_level: object = None
    alive: bool = True
    joined: bool = False
    placements: dict = field(default_factory=dict)  # (cluster, key, item) -> holder
    pending: dict = field(default_factory=dict)  # cluster -> set of IndexEntry awaiting registration
    foreign: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return CHORD if isinstance(self.low_level, chord.ChordState) else FLOOD


class Network(Simulator):
    def __init__(self, ontology: Ontology, kinds: dict | None = None, config: NetConfig | None = None,
                 seed: int = 0, default_kind: str = FLOOD):
        config = config or NetConfig()
        super().__init__(seed, config.base_latency, config.alpha)
        self.ontology = ontology
        self.config = config
        names = list(leaf_clusters(ontology)) + [DEFAULT_CLUSTER]
        self.directory = ClusterDirectory(names, kinds or {}, config.params, default_kind)
        self.flood_clusters: dict[str, FloodCluster] = {}
        for name in self.directory.ring:
            if self.directory.kind(name) == FLOOD:
                self.flood_clusters[name] = FloodCluster(name, config.flood_max, config.flood_min,
                                                         config.flood_c, self.rng(f"flood/{name}"))
        self.peers: dict[PeerId, PeerState] = {}
        self._views: dict[str, dict] = defaultdict(dict)
        self._live = 0
        self._live_since = 0.0
        self._peer_ms = 0.0

    # engine hooks
    def is_alive(self, node) -> bool:
        if node is None:
            return True
        peer = self.peers.get(node)
        return peer is not None and peer.alive

    def position(self, node):
        peer = self.peers.get(node)
        return peer.coord if peer is not None else (0.5, 0.5)

    # views used by the overlay modules
    def chord_state(self, pid: PeerId):
        peer = self.peers.get(pid)
        return peer.low_level if peer is not None and peer.kind == CHORD else None

    def flood_state(self, pid: PeerId):
        peer = self.peers.get(pid)
        if peer is None or not peer.alive or peer.kind != FLOOD:
            return None
        return peer.low_level

    def _tally(self, delta: int) -> None:
        self._peer_ms += self._live * (self.now - self._live_since)
        self._live, self._live_since = self._live + delta, self.now

    def peer_seconds(self) -> float:
        return (self._peer_ms + self._live * (self.now - self._live_since)) / 1000.0

    def live_peers(self) -> list[PeerId]:
        return sorted(pid for pid, p in self.peers.items() if p.alive and p.joined)

    def members(self, cluster: str) -> list[PeerId]:
        return sorted(self.directory.members[cluster])

    def home_triples(self, pid: PeerId) -> set:
        peer = self.peers[pid]
        return {t for t in peer.repository if peer.home in clusters_of_triple(self.ontology, t)}

    # contacts
    def rebuild_contacts(self, pid: PeerId) -> None:
        peer = self.peers[pid]
        peer.contacts = build_contacts(pid, self.directory, self.directory.members, self.config.q,
                                       self.rng("contacts"))

    def _contacts_stale(self, pid: PeerId) -> bool:
        """A contact left the directory, or a populated neighbour cluster has no contact."""
        d, table = self.directory, self.peers[pid].contacts
        if any(c not in d.members[d.cluster_of(c)] for c in table.all()):
            return True
        own = d.cluster_of(pid)
        ring = [c for c in d.ring if c == own or d.members[c] - {pid}]
        covered = {d.cluster_of(c) for c in table.short_range}
        i = ring.index(own)
        wanted = {ring[(i + 1) % len(ring)], ring[i - 1]} if len(ring) > 1 else set()
        if d.members[own] - {pid}:
            wanted.add(own)
        return not wanted <= covered

    def _rebuild_all_contacts(self) -> None:
        for pid in self.live_peers():
            if pid in self.directory.members[self.peers[pid].home]:
                self.rebuild_contacts(pid)

    def _add_member(self, cluster: str, pid: PeerId) -> None:
        was_empty = not self.directory.members[cluster]
        self.directory.add_member(cluster, pid)
        if was_empty:
            self._rebuild_all_contacts()
        else:
            self.rebuild_contacts(pid)

    def _remove_member(self, cluster: str, pid: PeerId) -> None:
        if pid not in self.directory.members[cluster]:
            return
        self.directory.remove_member(cluster, pid)
        if not self.directory.members[cluster]:
            self._rebuild_all_contacts()

    # flood cluster views
    def _flood_sync(self, cluster: str, actor: PeerId) -> None:
        """Send each member whose view changed a versioned update from ``actor``."""
        fc = self.flood_clusters[cluster]
        sent = self._views[cluster]
        for pid in [p for p in sent if p not in fc.coords]:
            del sent[pid]
        for pid in sorted(fc.coords):
            view = fc.view(pid)
            if sent.get(pid) == view:
                continue
            sent[pid] = view
            if pid == actor:
                self._apply_view(pid, view, fc.version)
            else:
                self.send(actor, pid, MAINTENANCE,
                          lambda pid=pid, view=view, v=fc.version: self._apply_view(pid, view, v))

    def _apply_view(self, pid: PeerId, view, version: int) -> None:
        st = self.flood_state(pid)
        if st is None or version < st.version:
            return
        st.sub_id, neighbors, gateways = view
        st.neighbors, st.gateways, st.version = set(neighbors), dict(gateways), version

    def gateway_for(self, cluster: str, subtree: str, near: PeerId):
        """Live member of ``subtree`` closest to ``near``, used when a gateway is gone."""
        fc = self.flood_clusters[cluster]
        pool = [p for lid, sc in fc.leaves.items() if lid.startswith(subtree) for p in sc.members
                if self.is_alive(p)]
        if not pool:
            return None
        here = self.position(near)
        return min(pool, key=lambda p: (math.dist(self.position(p), here), p))

    # lifecycle
    def _make_peer(self, address: str, dataset, coord=None) -> tuple[PeerState, dict]:
        home, foreign = place_peer(dataset, self.ontology)
        pid = make_peer_id(home, address, self.config.params)
        if self.is_alive(pid):
            raise JoinFailed(f"peer id {pid} already in use")
        kind = self.directory.kind(home)
        if coord is None:
            r = self.rng("coords")
            coord = (r.random(), r.random())
        if kind == CHORD:
            low = chord.ChordState(pid, self.config.chord_bits, self.config.chord_s)
            for other in self.directory.members[home]:
                if self.is_alive(other) and chord.ring_id(other, low.bits) == low.id:
                    raise JoinFailed(f"chord id {low.id:#x} of {pid} collides with {other}")
        else:
            low = FloodState(pid, tuple(coord))
        peer = PeerState(pid, address, home, tuple(coord), set(dataset), low_level=low, foreign=foreign)
        return peer, foreign

    def join_proc(self, peer: PeerState, foreign: dict):
        pid, home = peer.id, peer.home
        live = [p for p in self.members(home) if self.is_alive(p)]
        bootstrap = self.rng("bootstrap").choice(live) if live else None
        if peer.kind == CHORD:
            yield from chord.join_proc(self, pid, bootstrap)
        else:
            if bootstrap is not None:
                ok = yield self.forward(pid, bootstrap, MAINTENANCE)
                if ok is FAILED:
                    raise JoinFailed(f"bootstrap {bootstrap} unreachable")
            fc = self.flood_clusters[home]
            fc.add(pid, peer.coord)
            self._flood_sync(home, bootstrap or pid)
        peer.joined = True
        self._tally(+1)
        self._add_member(home, pid)
        if peer.kind == CHORD:
            for t in sorted(self.home_triples(pid)):
                yield from self._publish(pid, t)
        if foreign:
            yield from register_proc(self, pid, foreign)
        if self.config.timers:
            self._start_timers(pid)
        self.metrics.churn["join"] += 1
        return pid

    def _publish(self, pid: PeerId, t):
        """Store one home triple in the peer's chord cluster and remember the holders."""
        child = self.spawn(chord.store_proc(self, pid, t), at=pid)
        try:
            placed = yield child
        except LookupFailed:
            return False
        peer = self.peers[pid]
        if placed is FAILED or not peer.alive:
            return False
        for key, item, holder in placed:
            peer.placements[(peer.home, key, item)] = holder
        return True

    def start_join(self, address: str, dataset, coord=None):
        """Create the peer and spawn its join; returns the process."""
        peer, foreign = self._make_peer(address, dataset, coord)
        self.peers[peer.id] = peer
        proc = self.spawn(self.join_proc(peer, foreign), at=peer.id)

        def cleanup(fut):
            if fut.error is not None or fut.value is FAILED:
                self._abort_join(peer)

        proc.add_callback(cleanup)
        return proc

    def _abort_join(self, peer: PeerState) -> None:
        if self.peers.get(peer.id) is peer:
            peer.alive = False
            self._remove_member(peer.home, peer.id)
            if peer.kind == FLOOD and peer.id in self.flood_clusters[peer.home].coords:
                self.flood_clusters[peer.home].remove(peer.id)
                self._flood_sync(peer.home, peer.id)
            del self.peers[peer.id]

    def join_peer(self, address: str, dataset, coord=None) -> PeerId:
        return self.run_process(self.start_join(address, dataset, coord))

    def leave_peer(self, pid: PeerId, graceful: bool = True) -> None:
        peer = self.peers[pid]
        if not peer.alive:
            return
        if peer.joined:
            self._tally(-1)
        if not graceful:
            peer.alive = False
            self.metrics.churn["fail"] += 1
            return
        if peer.joined:
            self._withdraw(peer)
            if peer.kind == CHORD:
                chord.leave(self, pid)
        peer.alive = False
        self.metrics.churn["leave"] += 1
        if peer.kind == FLOOD and pid in self.flood_clusters[peer.home].coords:
            self.flood_clusters[peer.home].remove(pid)
            self._flood_sync(peer.home, pid)
        self._remove_member(peer.home, pid)

    def _withdraw(self, peer: PeerState) -> None:
        by_holder = defaultdict(list)
        for (cluster, key, item), holder in peer.placements.items():
            if holder != peer.id:
                by_holder[holder].append((cluster, key, item))
        for holder in sorted(by_holder):
            entries = by_holder[holder]
            self.send(peer.id, holder, MAINTENANCE, lambda h=holder, e=entries: self._drop_items(h, e))
        peer.placements.clear()

    def _drop_items(self, holder: PeerId, entries) -> None:
        peer = self.peers.get(holder)
        if peer is None:
            return
        for cluster, key, item in entries:
            if peer.kind == CHORD:
                peer.low_level.store.get(key, set()).discard(item)
            else:
                peer.low_level.index.discard(item)

    def report_dead(self, pid: PeerId, by: PeerId | None = None) -> None:
        """Failure detected by ``by``: drop ``pid`` from the directory and repair."""
        peer = self.peers.get(pid)
        if peer is None or peer.alive:
            return
        fc = self.flood_clusters.get(peer.home)
        if fc is not None and pid in fc.coords:
            fc.remove(pid)
            actor = by if by is not None and self.is_alive(by) else None
            if actor is None and fc.coords:
                actor = min(fc.coords)
            if actor is not None:
                self._flood_sync(peer.home, actor)
        self._remove_member(peer.home, pid)

    # flood-side storage used by foreign registration
    def store_in_cluster(self, entry: PeerId, cluster: str, items, owner: PeerId):
        """Process at ``entry``: store index items natively, then ack the owner."""
        placed = []
        if self.directory.kind(cluster) == CHORD:
            cur = entry
            for item in items:
                child = self.spawn(chord.store_proc(self, cur, item), at=cur)
                try:
                    res = yield child
                except LookupFailed:
                    continue
                if res is FAILED:
                    break
                placed.extend(res)
        else:
            st = self.flood_state(entry)
            st.index.update(items)
            placed = [(None, item, entry) for item in items]
        if owner != entry:
            ok = yield self.forward(entry, owner, MAINTENANCE)
            if ok is FAILED:
                return None
        return placed

    # periodic maintenance
    def _start_timers(self, pid: PeerId) -> None:
        peer = self.peers[pid]
        cfg = self.config
        r = self.rng("timers")
        if peer.kind == CHORD:
            self.spawn(self._timer(pid, cfg.t_stab, r.uniform(0, cfg.t_stab), self._chord_tick), at=pid)
        else:
            self.spawn(self._timer(pid, cfg.t_ping, r.uniform(0, cfg.t_ping), self._flood_tick), at=pid)
        if cfg.refresh_ms > 0:
            self.spawn(self._timer(pid, cfg.refresh_ms, r.uniform(0, cfg.refresh_ms), self.refresh_proc), at=pid)

    def _timer(self, pid: PeerId, period: float, offset: float, body):
        yield self.sleep(offset)
        while self.is_alive(pid):
            try:
                yield self.spawn(body(pid), at=pid)
            except OverlayError:
                pass
            yield self.sleep(period)

    def _chord_tick(self, pid: PeerId):
        yield from chord.stabilize_proc(self, pid)
        yield self.spawn(chord.fix_fingers_proc(self, pid), at=pid)

    def _flood_tick(self, pid: PeerId):
        st = self.flood_state(pid)
        for nb in sorted(st.neighbors):
            ok = yield self.rpc(pid, nb, MAINTENANCE, _pong)
            if ok is FAILED:
                self.report_dead(nb, by=pid)

    def _check_held(self, holder: PeerId, entries) -> list:
        peer = self.peers[holder]
        if peer.kind == CHORD:
            st = peer.low_level
            return [e for e in entries if e[2] not in st.store.get(e[1], ())]
        return [e for e in entries if e[2] not in peer.low_level.index]

    def refresh_proc(self, pid: PeerId):
        """Owner-driven soft state: re-publish anything a holder no longer has."""
        peer = self.peers[pid]
        if self._contacts_stale(pid):
            self.rebuild_contacts(pid)
        by_holder = defaultdict(list)
        for entry, holder in sorted(peer.placements.items(), key=lambda kv: (str(kv[1]), str(kv[0]))):
            by_holder[holder].append(entry)
        lost = []
        for holder in sorted(by_holder):
            entries = by_holder[holder]
            if holder == pid:
                missing = self._check_held(pid, entries)
            else:
                missing = yield self.rpc(pid, holder, MAINTENANCE, self._check_held, holder, entries)
                if missing is FAILED:
                    self.report_dead(holder, by=pid)
                    missing = entries
            lost.extend(missing)
        redo_home, redo_foreign = set(), defaultdict(set)
        for cluster, key, item in lost:
            peer.placements.pop((cluster, key, item), None)
            if isinstance(item, IndexEntry):
                redo_foreign[cluster].add(item.triple)
            else:
                redo_home.add(item)
        for cluster, items in peer.pending.items():
            redo_foreign[cluster].update(e.triple for e in items)
        peer.pending = {}
        for t in sorted(redo_home):
            yield from self._publish(pid, t)
        if redo_foreign:
            yield from register_proc(self, pid, {c: ts for c, ts in redo_foreign.items() if ts})
        return len(lost)

    def settle(self, duration: float) -> None:
        self.run_until(self.now + duration)

    # churn
    def churn(self, rate: float, duration: float, new_peer, graceful_fraction: float = 0.8,
              join_fraction: float = 0.5) -> list[dict]:
        """Schedule Poisson join/leave events over ``duration`` ms starting now.

        ``new_peer()`` returns ``(address, dataset)`` for each arrival.  The
        returned list fills with one record per event as they fire.
        """
        r = self.rng("churn")
        log: list[dict] = []
        if rate <= 0:
            return log
        t = 0.0
        while True:
            t += r.expovariate(rate) * 1000.0
            if t > duration:
                break
            if r.random() < join_fraction:
                self.schedule(t, self._churn_join, new_peer, log, tag="churn")
            else:
                self.schedule(t, self._churn_leave, r.random() < graceful_fraction, r.random(), log,
                              tag="churn")
        return log

    def _churn_join(self, new_peer, log) -> None:
        for _ in range(8):
            address, dataset = new_peer()
            try:
                peer, foreign = self._make_peer(address, dataset)
            except JoinFailed:
                continue
            self.peers[peer.id] = peer
            proc = self.spawn(self.join_proc(peer, foreign), at=peer.id)
            proc.add_callback(lambda fut, peer=peer: self._abort_join(peer)
                              if fut.error is not None or fut.value is FAILED else None)
            log.append({"type": "churn", "event": "join", "time": round(self.now, 3), "peer": str(peer.id),
                        "cluster": peer.home})
            return

    def _churn_leave(self, graceful: bool, u: float, log) -> None:
        live = self.live_peers()
        if len(live) <= 1:
            return
        pid = live[int(u * len(live))]
        home = self.peers[pid].home
        self.leave_peer(pid, graceful)
        log.append({"type": "churn", "event": "leave" if graceful else "fail", "time": round(self.now, 3),
                    "peer": str(pid), "cluster": home})

    # invariant checks
    def chord_ring_ok(self, cluster: str) -> bool:
        live = [p for p in self.members(cluster) if self.is_alive(p)]
        if not live:
            return True
        bits = self.config.chord_bits
        order = sorted(live, key=lambda p: chord.ring_id(p, bits))
        for i, p in enumerate(order):
            if self.chord_state(p).successor != order[(i + 1) % len(order)]:
                return False
        return True

    def flood_sizes_ok(self, cluster: str) -> bool:
        fc = self.flood_clusters[cluster]
        sizes = [len(sc.members) for sc in fc.leaves.values()]
        if len(sizes) == 1:
            return sizes[0] <= fc.max_size
        return all(fc.min_size <= s <= fc.max_size for s in sizes)


def _pong(*_):
    return True
