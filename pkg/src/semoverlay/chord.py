"""Chord ring used as the low-level overlay of static-data clusters.

Every triple is stored three times, under the hashes of its
``subject|predicate``, ``predicate|object`` and ``subject|object`` pairs.
A peer's ring id is the top ``bits`` bits of its nid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .engine import FAILED, MAINTENANCE, QUERY, RESPONSE
from .errors import JoinFailed, LookupFailed, UnsupportedPattern
from .identity import PeerId, hash_bits
from .semantics import Triple, TriplePattern

SUB_PRED, PRED_OBJ, SUB_OBJ = "sub_pred", "pred_obj", "sub_obj"


@dataclass(frozen=True)
class PairKey:
    kind: str
    value: int


def _pair(a, b) -> str:
    return f"{a.canonical()}|{b.canonical()}"


def keys_for_triple(t: Triple, bits: int = 16) -> list[PairKey]:
    return [
        PairKey(SUB_PRED, hash_bits(_pair(t.subject, t.predicate), bits)),
        PairKey(PRED_OBJ, hash_bits(_pair(t.predicate, t.object), bits)),
        PairKey(SUB_OBJ, hash_bits(_pair(t.subject, t.object), bits)),
    ]


def key_for_pattern(q: TriplePattern, bits: int = 16) -> PairKey:
    s, p, o = (not t.is_var for t in q.terms)
    if s and p:
        return PairKey(SUB_PRED, hash_bits(_pair(q.subject, q.predicate), bits))
    if p and o:
        return PairKey(PRED_OBJ, hash_bits(_pair(q.predicate, q.object), bits))
    if s and o:
        return PairKey(SUB_OBJ, hash_bits(_pair(q.subject, q.object), bits))
    raise UnsupportedPattern("a chord lookup needs two bound positions")


def in_open(x: int, a: int, b: int, size: int) -> bool:
    """x in the circular open interval (a, b); (a, a) is everything but a."""
    if a == b:
        return x != a
    return 0 < (x - a) % size < (b - a) % size


def in_half(x: int, a: int, b: int, size: int) -> bool:
    """x in the circular interval (a, b]; (a, a] is the whole ring."""
    if a == b:
        return True
    return 0 < (x - a) % size <= (b - a) % size


def ring_id(pid: PeerId, bits: int) -> int:
    return pid.nid >> (pid.n - bits)


@dataclass
class ChordState:
    pid: PeerId
    bits: int = 16
    s: int = 3
    successors: list = field(default_factory=list)
    predecessor: PeerId | None = None
    fingers: list = field(default_factory=list)
    store: dict = field(default_factory=dict)
    next_finger: int = 1

    def __post_init__(self):
        self.id = ring_id(self.pid, self.bits)
        self.size = 1 << self.bits
        if not self.fingers:
            self.fingers = [None] * self.bits

    def cid(self, pid: PeerId) -> int:
        return ring_id(pid, self.bits)

    @property
    def successor(self) -> PeerId:
        return self.successors[0] if self.successors else self.pid

    def set_successors(self, candidates) -> None:
        out = []
        for p in candidates:
            if p != self.pid and p not in out:
                out.append(p)
        self.successors = out[:self.s] or [self.pid]
        self.fingers[0] = self.successors[0]

    def forget(self, dead: PeerId) -> None:
        self.fingers = [None if f == dead else f for f in self.fingers]
        if self.predecessor == dead:
            self.predecessor = None
        rest = [p for p in self.successors if p != dead]
        if not rest:
            # fall back to the nearest live-looking finger clockwise
            known = [f for f in self.fingers if f is not None and f != self.pid]
            known.sort(key=lambda f: (self.cid(f) - self.id) % self.size)
            rest = known[:1]
        self.set_successors(rest)

    def owns(self, key: int) -> bool:
        if self.predecessor is None or self.predecessor == self.pid:
            return self.successor == self.pid
        return in_half(key, self.cid(self.predecessor), self.id, self.size)

    def closest_preceding(self, key: int) -> PeerId:
        best, best_d = None, -1
        for c in self.fingers + self.successors:
            if c is None or c == self.pid:
                continue
            cc = self.cid(c)
            if in_open(cc, self.id, key, self.size):
                d = (cc - self.id) % self.size
                if d > best_d:
                    best, best_d = c, d
        return best if best is not None else self.successor

    def item_count(self) -> int:
        return sum(len(v) for v in self.store.values())

    def put(self, key: int, item) -> None:
        self.store.setdefault(key, set()).add(item)


# -- lookups -------------------------------------------------------------

def lookup_proc(net, entry: PeerId, key: int, tag: str = QUERY):
    """Recursive lookup; the calling process ends up at the responsible peer.

    Returns ``(peer, hops)`` where hops counts forwarded messages.
    """
    cur, hops, final = entry, 0, False
    st = net.chord_state(cur)
    ttl = st.bits + st.s
    while True:
        st = net.chord_state(cur)
        if key == st.id or st.successor == cur:
            return cur, hops
        if st.predecessor is not None and st.predecessor != cur:
            if in_half(key, st.cid(st.predecessor), st.id, st.size):
                return cur, hops
        elif final:
            return cur, hops
        succ = st.successor
        if in_half(key, st.id, st.cid(succ), st.size):
            nxt, last = succ, True
        else:
            nxt, last = st.closest_preceding(key), False
        if hops >= ttl:
            raise LookupFailed(f"lookup for {key} exceeded {ttl} hops")
        ok = yield net.forward(cur, nxt, tag)
        if ok is FAILED:
            st.forget(nxt)
            net.report_dead(nxt, by=cur)
            final = False
            continue
        cur, hops, final = nxt, hops + 1, last


def find_successor(net, entry: PeerId, key: int) -> tuple[PeerId, int]:
    return net.run_process(net.spawn(lookup_proc(net, entry, key), at=entry))


def store_proc(net, entry: PeerId, item, tag: str = MAINTENANCE):
    """Store ``item`` (a Triple or IndexEntry) under its three pair keys.

    Returns ``[(key, item, holder), ...]``.  Lookups start wherever the
    process currently is, which is a cluster member at every step.
    """
    triple = getattr(item, "triple", item)
    bits = net.chord_state(entry).bits
    placed, cur = [], entry
    for pk in keys_for_triple(triple, bits):
        holder, _ = yield from lookup_proc(net, cur, pk.value, tag)
        net.chord_state(holder).put(pk.value, item)
        placed.append((pk.value, item, holder))
        cur = holder
    return placed


def store_triple(net, entry: PeerId, item) -> list[PeerId]:
    placed = net.run_process(net.spawn(store_proc(net, entry, item), at=entry))
    return [holder for _, _, holder in placed]


def lookup_pattern_proc(net, entry: PeerId, q: TriplePattern, tag: str = QUERY):
    """Returns ``(items, hops, holder)``; the process ends at the holder."""
    st = net.chord_state(entry)
    pk = key_for_pattern(q, st.bits)
    holder, hops = yield from lookup_proc(net, entry, pk.value, tag)
    found = set()
    for item in net.chord_state(holder).store.get(pk.value, ()):
        if q.matches(getattr(item, "triple", item)):
            found.add(item)
    return found, hops, holder


def lookup_pattern(net, entry: PeerId, q: TriplePattern) -> tuple[set, int]:
    found, hops, _ = net.run_process(net.spawn(lookup_pattern_proc(net, entry, q), at=entry))
    return found, hops


# -- membership and maintenance -----------------------------------------

def _handoff(net, holder: PeerId, new: PeerId):
    # runs at the new peer's successor
    st = net.chord_state(holder)
    new_id = st.cid(new)
    moved = {}
    for k in sorted(st.store):
        if not in_half(k, new_id, st.id, st.size):
            moved[k] = st.store.pop(k)
    old_pred = st.predecessor
    if old_pred is None and st.successor == holder:
        old_pred = holder
    st.predecessor = new
    if st.successor == holder:
        st.set_successors([new])
    return moved, old_pred, list(st.successors)


def _adopt_successor(net, at: PeerId, new: PeerId):
    st = net.chord_state(at)
    if st is None:
        return
    if st.successor == at or in_open(st.cid(new), st.id, st.cid(st.successor), st.size):
        st.set_successors([new] + st.successors)


def join_proc(net, new: PeerId, bootstrap: PeerId | None):
    st = net.chord_state(new)
    if bootstrap is None:
        st.successors, st.predecessor = [new], None
        st.fingers = [new] * st.bits
        return 0
    ok = yield net.forward(new, bootstrap, MAINTENANCE)
    if ok is FAILED:
        raise JoinFailed(f"bootstrap {bootstrap} unreachable")
    holder, _ = yield from lookup_proc(net, bootstrap, st.id, MAINTENANCE)
    if st.cid(holder) == st.id:
        raise JoinFailed(f"ring id {st.id} already taken by {holder}")
    if holder != new:
        ok = yield net.forward(holder, new, MAINTENANCE)
        if ok is FAILED:
            raise JoinFailed("lost contact with bootstrap path")
    res = yield net.rpc(new, holder, MAINTENANCE, _handoff, net, holder, new)
    if res is FAILED:
        raise JoinFailed(f"successor {holder} vanished during join")
    moved, old_pred, succ_list = res
    for k, items in moved.items():
        st.store.setdefault(k, set()).update(items)
    st.predecessor = old_pred if old_pred != new else None
    st.set_successors([holder] + succ_list)
    if old_pred is not None and old_pred not in (new, holder):
        net.send(new, old_pred, MAINTENANCE, lambda: _adopt_successor(net, old_pred, new))
    # finger table: reuse the previous finger when it already covers the start
    for i in range(1, st.bits):
        start = (st.id + (1 << i)) % st.size
        prev = st.fingers[i - 1]
        if prev is not None and in_half(start, st.id, st.cid(prev), st.size):
            st.fingers[i] = prev
            continue
        try:
            f, _ = yield from lookup_proc(net, new, start, MAINTENANCE)
        except LookupFailed:
            st.fingers[i] = st.successor
            continue
        if f != new:
            ok = yield net.forward(f, new, MAINTENANCE)
            if ok is FAILED:
                return sum(len(v) for v in moved.values())
        st.fingers[i] = f
    return sum(len(v) for v in moved.values())


def join(net, new: PeerId, bootstrap: PeerId | None) -> ChordState:
    net.run_process(net.spawn(join_proc(net, new, bootstrap), at=new))
    return net.chord_state(new)


def _absorb(net, at: PeerId, items: dict, leaving: PeerId, new_pred):
    st = net.chord_state(at)
    for k, vals in items.items():
        st.store.setdefault(k, set()).update(vals)
    if st.predecessor == leaving:
        st.predecessor = new_pred if new_pred != at else None
    st.forget(leaving)


def _skip(net, at: PeerId, leaving: PeerId, successors: list):
    st = net.chord_state(at)
    if st.successor == leaving:
        st.set_successors([p for p in successors if p != at] + st.successors[1:])
    st.forget(leaving)


def leave(net, peer: PeerId) -> int:
    """Graceful departure: hand every stored item to the successor."""
    st = net.chord_state(peer)
    items, count = st.store, st.item_count()
    st.store = {}
    succ, pred, succs = st.successor, st.predecessor, list(st.successors)
    if succ != peer:
        net.send(peer, succ, MAINTENANCE, lambda: _absorb(net, succ, items, peer, pred))
    else:
        count = 0
    if pred is not None and pred not in (peer, succ):
        net.send(peer, pred, MAINTENANCE, lambda: _skip(net, pred, peer, succs))
    return count


def _stab_info(net, at: PeerId):
    st = net.chord_state(at)
    return st.predecessor, list(st.successors)


def _ping(*_):
    return True


def _notify(net, at: PeerId, cand: PeerId):
    st = net.chord_state(at)
    if st is None:
        return
    old = st.predecessor
    if old is None or old == at or in_open(st.cid(cand), st.cid(old), st.id, st.size):
        st.predecessor = cand
        if st.successor == at:
            st.set_successors([cand])
        if old is not None and old != at:
            moved = {}
            for k in sorted(st.store):
                if in_half(k, st.cid(old), st.cid(cand), st.size):
                    moved[k] = st.store.pop(k)
            if moved:
                net.send(at, cand, MAINTENANCE, lambda: _receive(net, cand, moved))


def _receive(net, at: PeerId, items: dict):
    st = net.chord_state(at)
    for k, vals in items.items():
        st.store.setdefault(k, set()).update(vals)


def stabilize_proc(net, peer: PeerId):
    st = net.chord_state(peer)
    pred = st.predecessor
    if pred is not None and pred != peer:
        ok = yield net.rpc(peer, pred, MAINTENANCE, _ping)
        if ok is FAILED:
            net.report_dead(pred, by=peer)
            if st.predecessor == pred:
                st.predecessor = None
    for _ in range(st.s + 2):
        succ = st.successor
        if succ == peer:
            if st.predecessor is None or st.predecessor == peer:
                return st.successors
            st.set_successors([st.predecessor])
            continue
        res = yield net.rpc(peer, succ, MAINTENANCE, _stab_info, net, succ)
        if res is FAILED:
            st.forget(succ)
            net.report_dead(succ, by=peer)
            continue
        x, succ_list = res
        cands = [succ] + succ_list
        if x is not None and x != peer and in_open(st.cid(x), st.id, st.cid(succ), st.size):
            cands.insert(0, x)
        st.set_successors(cands)
        break
    if st.successor != peer:
        target = st.successor
        net.send(peer, target, MAINTENANCE, lambda: _notify(net, target, peer))
    return st.successors


def fix_fingers_proc(net, peer: PeerId):
    """Refresh one finger slot (round-robin); slot 0 mirrors the successor."""
    st = net.chord_state(peer)
    i = st.next_finger
    st.next_finger = i + 1 if i + 1 < st.bits else 1
    start = (st.id + (1 << i)) % st.size
    try:
        f, _ = yield from lookup_proc(net, peer, start, MAINTENANCE)
    except LookupFailed:
        return None
    if f != peer:
        ok = yield net.forward(f, peer, MAINTENANCE)
        if ok is FAILED:
            return None
    st.fingers[i] = f
    st.fingers[0] = st.successor
    return f


def maintenance_proc(net, peer: PeerId):
    yield from stabilize_proc(net, peer)
    yield from fix_fingers_proc(net, peer)


def stabilize(net, peer: PeerId):
    return net.run_process(net.spawn(stabilize_proc(net, peer), at=peer))


def fix_fingers(net, peer: PeerId):
    return net.run_process(net.spawn(fix_fingers_proc(net, peer), at=peer))


def fetch_back(net, holder: PeerId, origin: PeerId, tag: str = RESPONSE):
    """Move the calling process back to ``origin`` (e.g. to deliver results)."""
    if holder == origin:
        return True
    ok = yield net.forward(holder, origin, tag)
    return ok is not FAILED
