import json
import random
from collections import Counter

import pytest
from scipy.stats import chisquare

from semoverlay import cli
from semoverlay.errors import ConfigError
from semoverlay.harness import (DEFAULT_MIX, bundled, config_from_dict, execute_query, generate_workload,
                                load_scenario_ontology, load_workload, prepare, report_from_dir, run_scenario,
                                validate_config)
from semoverlay.semantics import Term, Triple, clusters_of_triple
from semoverlay.simnet import NetConfig, Network
from semoverlay.toplevel import CHORD, place_peer

I, L = Term.iri, Term.literal
EXAMPLE = Triple(I("socam:TaoGu"), I("socam:homeAddress"), L("XYZ"))
WORKED = "SELECT ?x WHERE (<socam:TaoGu> <socam:homeAddress> ?x)"


def smoke_doc():
    return json.loads(bundled("smoke.json").read_text())


def test_config_roundtrip():
    cfg = config_from_dict(smoke_doc())
    assert cfg.generator.peer_count == 20 and cfg.chord.t_stab == 500
    doc = cfg.to_dict()
    assert doc["chord"]["T_stab"] == 500 and doc["overlayKind"]["clusters"] == {"IndoorSpace": "chord"}
    assert config_from_dict(doc).to_dict() == doc


def test_unknown_key_and_cluster_are_config_errors(socam):
    doc = smoke_doc()
    doc["workload"]["bogus"] = 1
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    doc = smoke_doc()
    doc["overlayKind"]["clusters"]["Spaceship"] = "chord"
    cfg = config_from_dict(doc)
    with pytest.raises(ConfigError, match="Spaceship"):
        validate_config(cfg, socam)


def test_cli_reports_config_error(tmp_path, capsys):
    doc = smoke_doc()
    doc["overlayKind"]["clusters"]["Spaceship"] = "chord"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "Spaceship" in capsys.readouterr().err


def test_uniform_skew_spreads_peers_evenly(socam):
    doc = smoke_doc()
    doc["generator"].update(peerCount=400, triplesPerPeer=1, clusters=list(socam.leaves))
    cfg = config_from_dict(doc)
    w = generate_workload(cfg, socam, random.Random(1))
    homes = Counter(place_peer(ts, w.ontology)[0] for _, ts in w.peers)
    assert set(homes) == set(socam.leaves)
    assert chisquare([homes[c] for c in socam.leaves]).pvalue > 0.01


def test_zipf_skew_favours_first_cluster(socam):
    doc = smoke_doc()
    doc["generator"].update(peerCount=400, triplesPerPeer=1, clusterSkew="zipf", zipfS=1.0,
                            clusters=list(socam.leaves))
    w = generate_workload(config_from_dict(doc), socam, random.Random(2))
    homes = Counter(place_peer(ts, w.ontology)[0] for _, ts in w.peers)
    counts = [homes[c] for c in socam.leaves]
    weights = [1, 1 / 2, 1 / 3, 1 / 4]
    expect = [400 * x / sum(weights) for x in weights]
    assert chisquare(counts, expect).pvalue > 0.01


def test_generated_triples_land_in_one_cluster(socam):
    cfg = config_from_dict(smoke_doc())
    w = generate_workload(cfg, socam, random.Random(3))
    for _, ts in w.peers:
        for t in ts:
            assert len(clusters_of_triple(w.ontology, t)) == 1


def test_same_seed_same_workload():
    cfg = config_from_dict(smoke_doc())
    assert prepare(cfg).to_dict() == prepare(cfg).to_dict()
    other = config_from_dict({**smoke_doc(), "seed": 8})
    assert prepare(other).to_dict() != prepare(cfg).to_dict()


def test_pattern_mix_defaults():
    cfg = config_from_dict(smoke_doc())
    texts = prepare(cfg).queries
    assert len(texts) == 50 and set(DEFAULT_MIX) == {"sp?", "?po", "spo"}


def test_zero_queries_is_a_valid_run():
    doc = smoke_doc()
    doc["workload"]["queryCount"] = 0
    report = run_scenario(config_from_dict(doc))
    assert report.ok and report.summary["aggregates"]["phases"] == {}


def example_network(socam, kind):
    net = Network(socam, {"Adult": kind}, NetConfig(timers=False), seed=5)
    net.join_peer("137.132.74.135", {EXAMPLE})
    for k in range(5):
        net.join_peer(f"adult{k}", {Triple(I(f"socam:person{k}"), I("socam:homeAddress"), L(f"street {k}"))})
    for k in range(4):
        net.join_peer(f"room{k}", {Triple(I(f"socam:p{k}"), I("socam:locatedIn"), I("socam:Bedroom"))})
    net.settle(2000)
    return net


@pytest.mark.parametrize("kind", ["chord", "flood"])
def test_worked_query_returns_example_triple(socam, kind):
    net = example_network(socam, kind)
    origin = net.members("IndoorSpace")[0]
    out = execute_query(net, origin, WORKED)
    assert out.results == {EXAMPLE} and out.delivered and out.recall == 1.0
    assert out.clusters == ["Adult"] and out.hops >= 1


def test_query_with_no_matches(socam):
    net = example_network(socam, CHORD)
    out = execute_query(net, net.live_peers()[0], 'SELECT ?s WHERE (?s <socam:homeAddress> "nowhere")')
    assert out.results == set() and out.delivered and out.recall == 1.0


def test_query_spanning_two_clusters(socam):
    net = example_network(socam, "flood")
    garden = Triple(I("socam:Amy"), I("socam:locatedIn"), I("socam:Garden"))
    net.join_peer("outside", {garden})
    net.settle(1000)
    out = execute_query(net, net.members("Adult")[0], "SELECT ?s WHERE (?s <socam:locatedIn> ?o)")
    assert out.clusters == ["IndoorSpace", "OutdoorSpace"]
    assert out.recall == 1.0 and garden in out.results and len(out.results) == 5


def test_variable_predicate_is_counted_not_crashed(socam):
    net = example_network(socam, CHORD)
    out = execute_query(net, net.live_peers()[0], "SELECT ?o WHERE (<socam:TaoGu> ?p ?o)")
    assert out.unsupported and out.results == set()


def test_smoke_scenario_full_recall():
    report = run_scenario(config_from_dict(smoke_doc()))
    static = report.summary["aggregates"]["phases"]["static"]
    assert report.ok and static["recall"] == 1.0 and static["success_rate"] == 1.0


def test_report_recomputes_summary(tmp_path):
    report = run_scenario(config_from_dict(smoke_doc()))
    report.write(tmp_path)
    rep = report_from_dir(tmp_path)
    assert rep["matches_summary"]


def test_cli_gen_then_run_from_dataset(tmp_path, capsys):
    doc = smoke_doc()
    cfg_path = tmp_path / "smoke.json"
    doc["ontologyPath"] = str(bundled("socam.json"))
    cfg_path.write_text(json.dumps(doc))
    assert cli.main(["gen", "--config", str(cfg_path), "--out", str(tmp_path / "gen")]) == 0
    o = load_scenario_ontology(config_from_dict(doc))
    w = load_workload(tmp_path / "gen" / "dataset.json", o)
    assert len(w.peers) == 20 and len(w.queries) == 50
    doc["datasetPath"] = str(tmp_path / "gen" / "dataset.json")
    cfg_path.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    del doc["datasetPath"]
    cfg_path.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "metrics.ndjson").read_bytes() == (tmp_path / "b" / "metrics.ndjson").read_bytes()
    assert cli.main(["report", "--in", str(tmp_path / "a")]) == 0
    capsys.readouterr()
    assert cli.main(["query", "--config", str(cfg_path), "--text", WORKED]) == 0
    assert "target clusters: Adult" in capsys.readouterr().out
