import itertools
import random

import pytest
from scipy.stats import chisquare

from semoverlay.engine import Simulator
from semoverlay.errors import NoContacts, ValidationError
from semoverlay.harness import synthetic_ontology, synthetic_triple
from semoverlay.identity import ClusterKey, IdParams, PeerId, make_peer_id, ring_distance
from semoverlay.semantics import DEFAULT_CLUSTER, Term, Triple
from semoverlay.simnet import NetConfig, Network
from semoverlay.toplevel import (DELIVER, ClusterDirectory, ContactTable, build_contacts, draw_long_range_cluster,
                                 greedy_next_hop, long_range_weights, place_peer, route_to_cluster)

I, L = Term.iri, Term.literal


def indoor(k):
    return Triple(I(f"socam:p{k}"), I("socam:locatedIn"), I("socam:Bedroom"))


def adult(k):
    return Triple(I("socam:TaoGu"), I("socam:homeAddress"), L(str(k)))


def test_place_peer_majority(socam):
    home, foreign = place_peer({indoor(k) for k in range(10)} | {adult(k) for k in range(3)}, socam)
    assert home == "IndoorSpace"
    assert set(foreign) == {"Adult"} and len(foreign["Adult"]) == 3


def test_place_peer_single_cluster_and_empty(socam):
    assert place_peer({indoor(k) for k in range(4)}, socam) == ("IndoorSpace", {})
    assert place_peer(set(), socam) == (DEFAULT_CLUSTER, {})


def test_place_peer_tie_goes_to_smaller_name(socam):
    home, foreign = place_peer({indoor(k) for k in range(5)} | {adult(k) for k in range(5)}, socam)
    assert home == "Adult" and len(foreign["IndoorSpace"]) == 5


def test_directory_rejects_key_collision():
    # search a pair of names whose 4-bit keys collide
    p = IdParams(m=4, n=8)
    names = [f"c{i}" for i in range(40)]
    by_key = {}
    for n in names:
        by_key.setdefault(ClusterKey.of(n, p).value, []).append(n)
    pair = next(v for v in by_key.values() if len(v) > 1)[:2]
    with pytest.raises(ValidationError) as err:
        ClusterDirectory(pair, {}, p)
    assert pair[0] in str(err.value) and pair[1] in str(err.value)


def ring_of(n, p=IdParams()):
    names = [f"SC{i}" for i in range(n)]
    d = ClusterDirectory(names, {}, p)
    return d


def populate(d, per_cluster=3):
    members = {}
    for c in d.ring:
        members[c] = {make_peer_id(c, f"{c}/{k}", d.params) for k in range(per_cluster)}
    return members


def test_build_contacts_eight_cluster_ring():
    d = ring_of(8)
    members = populate(d)
    me = sorted(members[d.ring[1]])[0]
    t = build_contacts(me, d, members, 1, random.Random(1))
    clusters = [d.cluster_of(p) for p in t.short_range]
    assert clusters == [d.ring[1], d.ring[2], d.ring[0]]
    assert d.cluster_of(t.successor) == d.ring[2]
    assert len(t.long_range) == 1 and d.cluster_of(t.long_range[0]) != d.ring[1]
    every = t.all()
    assert me not in every and len(every) == len(set(every))


def test_build_contacts_two_clusters_q0():
    d = ring_of(2)
    members = populate(d)
    me = sorted(members[d.ring[0]])[0]
    t = build_contacts(me, d, members, 0, random.Random(2))
    assert [d.cluster_of(p) for p in t.short_range] == [d.ring[0], d.ring[1]]
    assert t.long_range == []


def test_build_contacts_skips_empty_clusters():
    d = ring_of(6)
    members = populate(d)
    members[d.ring[2]] = set()
    me = sorted(members[d.ring[1]])[0]
    t = build_contacts(me, d, members, 4, random.Random(3))
    assert d.cluster_of(t.successor) == d.ring[3]
    assert all(d.cluster_of(p) != d.ring[2] for p in t.all())


def test_long_range_weights_are_harmonic():
    d = ring_of(10)
    own = d.ring[0]
    names, probs = long_range_weights(own, d)
    raw = [1 / ring_distance(d.key(own).value, d.key(c).value, 16) for c in names]
    assert probs == pytest.approx([w / sum(raw) for w in raw])


def test_long_range_draws_within_three_sigma():
    d = ring_of(12)
    names, probs = long_range_weights(d.ring[3], d)
    cum = list(itertools.accumulate(probs))
    rng = random.Random(9)
    n = 100_000
    counts = {c: 0 for c in names}
    for _ in range(n):
        counts[draw_long_range_cluster(names, cum, rng)] += 1
    for c, pr in zip(names, probs):
        sigma = (n * pr * (1 - pr)) ** 0.5
        assert abs(counts[c] - n * pr) <= 3 * sigma + 1
    assert chisquare([counts[c] for c in names], [n * pr for pr in probs]).pvalue > 0.01


def pid(sid, nid=1):
    return PeerId(sid, nid, n=8, m=4)


def test_greedy_deliver_and_argmin():
    target = ClusterKey(0)
    me = pid(8)
    assert greedy_next_hop(pid(0), ContactTable(), target, 4) == DELIVER
    t = ContactTable(short_range=[pid(9), pid(3)], long_range=[pid(12)])
    # ring distances to 0 on a 16-ring: 9 -> 7, 3 -> 3, 12 -> 4
    assert greedy_next_hop(me, t, target, 4) == pid(3)


def test_greedy_tie_breaks_on_packed_id():
    t = ContactTable(short_range=[pid(2, 9), pid(14, 1), pid(2, 3)])
    assert greedy_next_hop(pid(8), t, ClusterKey(0), 4) == pid(2, 3)


def test_greedy_successor_fallback_when_stalled():
    # at sid 4 heading to 12 the only contact is a cluster mate, so nothing is closer
    t = ContactTable(short_range=[pid(4, 2)], successor=pid(5))
    assert greedy_next_hop(pid(4), t, ClusterKey(12), 4) == pid(5)
    with pytest.raises(NoContacts):
        greedy_next_hop(pid(4), ContactTable(), ClusterKey(12), 4)
    with pytest.raises(NoContacts):
        greedy_next_hop(pid(4), ContactTable(short_range=[pid(4, 2)]), ClusterKey(12), 4)


def synthetic_net(n_clusters, per_cluster, q, seed=1, timers=False):
    o = synthetic_ontology(n_clusters)
    net = Network(o, config=NetConfig(q=q, timers=False), seed=seed)
    for c in o.leaves:
        for k in range(per_cluster):
            net.join_peer(f"{c}/{k}", {synthetic_triple(c, k)})
    return net


def test_route_to_own_cluster_is_zero_hops():
    net = synthetic_net(6, 2, 1)
    src = net.live_peers()[0]
    r = route_to_cluster(net, src, net.peers[src].home)
    assert r.delivered and r.path == [src] and r.hops == 0
    assert r.record(7) == {"type": "route", "query_id": 7, "src": str(src), "target_cluster": net.peers[src].home,
                           "hops": 0, "delivered": True, "path_len": 1}


def test_route_ttl_exceeded():
    net = synthetic_net(12, 1, 0)
    ring = net.directory.ring
    src = sorted(net.directory.members[ring[0]])[0]
    r = route_to_cluster(net, src, ring[3], ttl=1)
    assert not r.delivered and r.error == "TtlExceeded" and r.hops == 1


def test_routes_strictly_progress_or_follow_ring():
    net = synthetic_net(16, 3, 2, seed=4)
    d, rng = net.directory, random.Random(0)
    for _ in range(60):
        src = rng.choice(net.live_peers())
        target = rng.choice([c for c in d.ring if d.members[c]])
        r = route_to_cluster(net, src, target)
        assert r.delivered and r.hops <= len(d.ring)
        assert len(set(r.path)) == len(r.path)
        key = d.key(target).value
        for a, b in zip(r.path, r.path[1:]):
            closer = ring_distance(b.sid, key, 16) < ring_distance(a.sid, key, 16)
            assert closer or b == net.peers[a].contacts.successor


def test_foreign_registration_into_chord_cluster(socam):
    net = Network(socam, {"IndoorSpace": "chord"}, NetConfig(timers=False), seed=2)
    for k in range(4):
        net.join_peer(f"in{k}", {indoor(100 + k)})
    net.settle(100)
    mine = {adult(k) for k in range(5)} | {indoor(k) for k in range(3)}
    owner = net.join_peer("owner", mine)
    assert net.peers[owner].home == "Adult"
    stored = [(k, item) for p in net.directory.members["IndoorSpace"]
              for k, items in net.chord_state(p).store.items() for item in items
              if getattr(item, "owner", None) == owner]
    assert len(stored) == 9
    assert {item.triple for _, item in stored} == {indoor(k) for k in range(3)}
    assert net.peers[owner].pending == {}


def test_first_peer_defers_foreign_registration(socam):
    net = Network(socam, {}, NetConfig(timers=False), seed=2)
    owner = net.join_peer("solo", {adult(1), adult(2), indoor(1)})
    assert net.peers[owner].home == "Adult"
    assert {e.triple for e in net.peers[owner].pending["IndoorSpace"]} == {indoor(1)}
