import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from oracles import ClosureOracle, random_ontology, random_triple
from semoverlay.errors import ParseError, UnboundSelectVariable, UnknownProperty, UnsupportedPattern, ValidationError
from semoverlay.semantics import (DEFAULT_CLUSTER, PropertySpec, Ontology, Term, Triple, TriplePattern,
                                  clusters_of_pattern, clusters_of_predicate, clusters_of_term, clusters_of_triple,
                                  dump_triples, leaf_clusters, load_ontology, load_triples, match_pattern,
                                  parse_query, render_query)

I, L, V = Term.iri, Term.literal, Term.var


def doc(classes, properties=(), instances=()):
    return json.dumps({"classes": classes, "properties": list(properties), "instances": list(instances)})


FIG1 = doc(
    [{"name": "Person", "level": "upper"}, {"name": "Adult", "parent": "Person", "level": "upper"},
     {"name": "Child", "parent": "Person", "level": "upper"}, {"name": "Location", "level": "upper"},
     {"name": "IndoorSpace", "parent": "Location", "level": "upper"},
     {"name": "OutdoorSpace", "parent": "Location", "level": "upper"}],
    [{"name": "socam:locatedIn", "kind": "ObjectProperty", "domains": ["Person"], "ranges": ["Location"]}])


def test_load_example_ontology():
    o = load_ontology(FIG1)
    assert len(o.classes) == 6 and len(o.properties) == 1
    assert leaf_clusters(o) == ("Adult", "Child", "IndoorSpace", "OutdoorSpace")


@pytest.mark.parametrize("text", [
    doc([]),
    doc([{"name": "A", "parent": "B", "level": "upper"}, {"name": "B", "parent": "A", "level": "upper"}]),
    doc([{"name": "A", "parent": "Z", "level": "upper"}]),
    doc([{"name": "A", "level": "upper"}], [{"name": "x:p", "kind": "DatatypeProperty", "domains": ["Q"]}]),
    doc([{"name": "A", "level": "upper"}], [{"name": "x:p", "kind": "ObjectProperty", "domains": ["A"]}]),
    doc([{"name": "A", "level": "lower"}]),
])
def test_invalid_ontologies(text):
    with pytest.raises(ValidationError):
        load_ontology(text)


@pytest.mark.parametrize("text", ["not json", "[1, 2]", json.dumps({"classes": [{"level": "upper"}]})])
def test_malformed_documents(text):
    with pytest.raises(ParseError):
        load_ontology(text)


def test_single_class_is_its_own_cluster():
    assert leaf_clusters(load_ontology(doc([{"name": "Solo", "level": "upper"}]))) == ("Solo",)


def test_lower_children_do_not_disqualify_leaf(socam):
    # Adult has the lower child Researcher but no upper child
    assert "Adult" in leaf_clusters(socam)
    assert "Person" not in leaf_clusters(socam)


def test_clusters_of_term(socam):
    assert clusters_of_term(socam, I("socam:Bedroom")) == {"IndoorSpace"}
    assert clusters_of_term(socam, L("XYZ")) == set()
    assert clusters_of_term(socam, I("socam:Nobody")) == set()
    # TaoGu is a Researcher, two hops below nothing but one below Adult
    assert clusters_of_term(socam, I("socam:TaoGu")) == {"Adult"}


def test_term_two_hops_below_leaf():
    o = load_ontology(doc(
        [{"name": "Adult", "level": "upper"}, {"name": "Staff", "parent": "Adult", "level": "lower"},
         {"name": "Professor", "parent": "Staff", "level": "lower"}],
        instances=[{"iri": "x:bob", "class": "Professor"}]))
    assert clusters_of_term(o, I("x:bob")) == {"Adult"}


def test_clusters_of_predicate(socam):
    assert clusters_of_predicate(socam, I("socam:locatedIn")) == {"IndoorSpace", "OutdoorSpace"}
    assert clusters_of_predicate(socam, I("socam:homeAddress")) == {"Adult"}
    with pytest.raises(UnknownProperty):
        clusters_of_predicate(socam, I("socam:undeclared"))


def test_worked_example_triple(socam):
    t = Triple(I("socam:TaoGu"), I("socam:locatedIn"), I("socam:Bedroom"))
    assert clusters_of_triple(socam, t) == {"IndoorSpace"}
    t = Triple(I("socam:TaoGu"), I("socam:homeAddress"), L("XYZ"))
    assert clusters_of_triple(socam, t) == {"Adult"}


def test_union_fallback_and_default(socam):
    # hasChild ranges over Child but the object is an Adult: no shared leaf
    t = Triple(I("socam:TaoGu"), I("socam:hasChild"), I("socam:TaoGu"))
    assert clusters_of_triple(socam, t) == {"Child", "Adult"}
    o = load_ontology(doc([{"name": "A", "level": "upper"}],
                          [{"name": "x:p", "kind": "DatatypeProperty", "domains": []}]))
    assert clusters_of_triple(o, Triple(I("x:s"), I("x:p"), L("1"))) == {DEFAULT_CLUSTER}


def test_clusters_of_pattern(socam):
    assert clusters_of_pattern(socam, TriplePattern(I("socam:TaoGu"), I("socam:homeAddress"), V("x"))) == {"Adult"}
    assert clusters_of_pattern(socam, TriplePattern(V("s"), I("socam:locatedIn"), I("socam:Bedroom"))) == {
        "IndoorSpace"}
    assert clusters_of_pattern(socam, TriplePattern(I("socam:TaoGu"), I("socam:locatedIn"), V("o"))) == {
        "IndoorSpace", "OutdoorSpace"}
    with pytest.raises(UnsupportedPattern):
        clusters_of_pattern(socam, TriplePattern(I("socam:TaoGu"), V("p"), V("o")))


def test_pattern_needs_a_bound_position():
    with pytest.raises(ValueError):
        TriplePattern(V("s"), V("p"), V("o"))


def test_parse_query_examples():
    q = parse_query("SELECT ?x WHERE (<socam:TaoGu> <socam:homeAddress> ?x)")
    assert q == TriplePattern(I("socam:TaoGu"), I("socam:homeAddress"), V("x"))
    assert q.bound_count == 2
    with pytest.raises(UnboundSelectVariable):
        parse_query("SELECT ?y WHERE (<a:b> <a:c> ?x)")
    with pytest.raises(ParseError):
        parse_query("SELECT ?x WHERE (<a:b>)")
    with pytest.raises(ParseError):
        parse_query('SELECT * WHERE ("lit" <a:c> ?x)')
    with pytest.raises(ParseError):
        parse_query("GIVE ME (<a:b> <a:c> ?x)")
    assert parse_query('select * where (<a:b> <a:c> "x y")').object == L("x y")


iris = st.from_regex(r"[a-z]{1,4}:[A-Za-z0-9_]{1,6}", fullmatch=True).map(Term.iri)
literals = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=8).map(Term.literal)
variables = st.sampled_from(["x", "y", "s", "o"]).map(Term.var)


@st.composite
def patterns(draw):
    s = draw(st.one_of(iris, variables))
    p = draw(st.one_of(iris, variables))
    o = draw(st.one_of(iris, literals, variables))
    if s.is_var and p.is_var and o.is_var:
        p = draw(iris)
    return TriplePattern(s, p, o)


@given(patterns())
def test_query_roundtrip(q):
    assert parse_query(render_query(q)) == q


@given(st.lists(st.tuples(iris, iris, st.one_of(iris, literals)), max_size=10))
def test_triple_lines_roundtrip(rows):
    triples = [Triple(*r) for r in rows]
    assert load_triples(dump_triples(triples).split("\n")) == triples


def test_triple_parse_accepts_brackets():
    assert Triple.parse('<socam:TaoGu> <socam:homeAddress> "XYZ"') == Triple.parse('socam:TaoGu socam:homeAddress "XYZ"')
    assert str(Triple(I("socam:TaoGu"), I("socam:homeAddress"), L("XYZ"))) == 'socam:TaoGu socam:homeAddress "XYZ"'
    with pytest.raises(ParseError):
        Triple.parse("a:b a:c")
    with pytest.raises(ValueError):
        Term.iri("no-colon")
    with pytest.raises(ValueError):
        Term.iri("a:b:c")


def test_match_pattern_examples():
    repo = {Triple(I("a:s"), I("a:p"), L("1")), Triple(I("a:s"), I("a:p"), L("2")), Triple(I("a:t"), I("a:p"), L("1"))}
    assert match_pattern(repo, TriplePattern(I("a:s"), I("a:p"), V("x"))) == {
        Triple(I("a:s"), I("a:p"), L("1")), Triple(I("a:s"), I("a:p"), L("2"))}
    assert match_pattern(set(), TriplePattern(I("a:s"), I("a:p"), V("x"))) == set()
    full = Triple(I("a:t"), I("a:p"), L("1"))
    assert match_pattern(repo, TriplePattern(*full.__dict__.values())) == {full}


@settings(max_examples=30)
@given(st.randoms(use_true_random=False))
def test_match_pattern_order_invariant(r):
    repo = [Triple(I(f"a:s{i % 3}"), I("a:p"), L(str(i % 4))) for i in range(20)]
    q = TriplePattern(V("s"), I("a:p"), L("1"))
    shuffled = list(repo)
    r.shuffle(shuffled)
    assert match_pattern(shuffled, q) == match_pattern(repo, q)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_clustering_matches_closure_oracle(seed):
    rng = random.Random(seed)
    o = random_ontology(rng)
    oracle = ClosureOracle(o)
    assert set(leaf_clusters(o)) == oracle.leaves
    for _ in range(40):
        t = random_triple(o, rng)
        got = clusters_of_triple(o, t)
        assert got == oracle.triple(t)
        assert got <= set(o.leaves) | {DEFAULT_CLUSTER}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_unrelated_additions_do_not_change_clusters(seed):
    rng = random.Random(seed)
    o = random_ontology(rng, max_classes=30)
    triples = [random_triple(o, rng) for _ in range(30)]
    before = [clusters_of_triple(o, t) for t in triples]
    # a new lower class under an existing leaf and an unrelated property
    leaf = o.leaves[0]
    bigger = Ontology(o.classes | {"Extra"}, {**o.parent, "Extra": leaf}, {**o.level, "Extra": "lower"},
                      {**o.properties, "p:extra": PropertySpec("DatatypeProperty", frozenset(["Extra"]))},
                      o.instance_class)
    assert [clusters_of_triple(bigger, t) for t in triples] == before


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pattern_clusters_cover_matching_triples(seed):
    # a triple matching a pattern maps into the pattern's clusters when its anchor position is bound in both
    rng = random.Random(seed)
    o = random_ontology(rng)
    for _ in range(30):
        t = random_triple(o, rng)
        for unbind in (0, 2):
            terms = [t.subject, t.predicate, t.object]
            terms[unbind] = V("x")
            q = TriplePattern(*terms)
            got = clusters_of_pattern(o, q)
            assert clusters_of_triple(o, t) & got or got == {DEFAULT_CLUSTER} or DEFAULT_CLUSTER in clusters_of_triple(o, t)
