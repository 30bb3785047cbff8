"""Ontologies, RDF triples and the ontology-based semantic clustering.

Semantic clusters are the leaf classes of the upper ontology.  A triple is
mapped to clusters by intersecting the clusters contributed by its
predicate with those of its object (ObjectProperty) or its subject
(DatatypeProperty).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

from .errors import (ParseError, UnboundSelectVariable, UnknownProperty,
                     UnsupportedPattern, ValidationError)

IRI, LITERAL, VARIABLE = "iri", "literal", "variable"
UPPER, LOWER = "upper", "lower"
OBJECT_PROPERTY, DATATYPE_PROPERTY = "ObjectProperty", "DatatypeProperty"
DEFAULT_CLUSTER = "__default"

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"n": "\n", "r": "\r"}
_IRI = re.compile(r'[^\s<>"()?:]+:[^\s<>"()?:]+')


@dataclass(frozen=True, order=True)
class Term:
    kind: str
    text: str

    def __post_init__(self):
        if self.kind == IRI:
            if not _IRI.fullmatch(self.text):
                raise ValueError(f"iri must be prefix:name, got {self.text!r}")
        elif self.kind == VARIABLE:
            if not re.fullmatch(r"\w+", self.text):
                raise ValueError(f"bad variable name {self.text!r}")
        elif self.kind != LITERAL:
            raise ValueError(f"unknown term kind {self.kind!r}")

    @classmethod
    def iri(cls, text: str) -> "Term":
        return cls(IRI, text)

    @classmethod
    def literal(cls, text: str) -> "Term":
        return cls(LITERAL, text)

    @classmethod
    def var(cls, name: str) -> "Term":
        return cls(VARIABLE, name)

    @property
    def is_var(self) -> bool:
        return self.kind == VARIABLE

    def canonical(self) -> str:
        """Text used in triple lines and pair-key hashing."""
        if self.kind == LITERAL:
            return '"' + "".join(_ESCAPES.get(ch, ch) for ch in self.text) + '"'
        if self.kind == VARIABLE:
            return "?" + self.text
        return self.text

    def __str__(self):
        return self.canonical()


@dataclass(frozen=True, order=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if self.subject.kind != IRI or self.predicate.kind != IRI:
            raise ValueError("triple subject and predicate must be iris")
        if self.object.is_var:
            raise ValueError("triple object cannot be a variable")

    def __str__(self):
        return f"{self.subject} {self.predicate} {self.object}"

    @classmethod
    def parse(cls, line: str) -> "Triple":
        terms = _split_terms(line)
        if len(terms) != 3 or any(t.is_var for t in terms):
            raise ParseError(f"not a triple: {line!r}")
        try:
            return cls(*terms)
        except ValueError as exc:
            raise ParseError(str(exc)) from None


@dataclass(frozen=True, order=True)
class TriplePattern:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if all(t.is_var for t in self.terms):
            raise ValueError("pattern needs at least one bound position")

    @property
    def terms(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.predicate, self.object)

    @property
    def bound_count(self) -> int:
        return sum(not t.is_var for t in self.terms)

    def variables(self) -> list[str]:
        out = []
        for t in self.terms:
            if t.is_var and t.text not in out:
                out.append(t.text)
        return out

    def matches(self, t: Triple) -> bool:
        return all(q.is_var or q == v for q, v in zip(self.terms, (t.subject, t.predicate, t.object)))

    def __str__(self):
        return render_query(self)


# -- parsing -------------------------------------------------------------

_TOKEN = re.compile(r'\s*(?:<([^<>\s]+)>|"((?:[^"\\]|\\.)*)"|\?(\w+)|([^\s<>"?()]+))')


def _split_terms(text: str) -> list[Term]:
    terms, pos = [], 0
    text = text.strip()
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if not mt or mt.end() == pos:
            raise ParseError(f"unexpected input at {text[pos:]!r}")
        iri, lit, var, bare = mt.groups()
        try:
            if iri is not None or bare is not None:
                terms.append(Term.iri(iri if iri is not None else bare))
            elif lit is not None:
                terms.append(Term.literal(re.sub(r"\\(.)", lambda m: _UNESCAPES.get(m[1], m[1]), lit)))
            else:
                terms.append(Term.var(var))
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        pos = mt.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return terms


_QUERY = re.compile(r"\s*SELECT\s+(.*?)\s*WHERE\s*\((.*)\)\s*$", re.IGNORECASE | re.DOTALL)


def parse_query(text: str) -> TriplePattern:
    """Parse ``SELECT ?x WHERE (<s> <p> ?x)``; one triple pattern only."""
    mt = _QUERY.match(text)
    if not mt:
        raise ParseError(f"expected SELECT <vars> WHERE (<s> <p> <o>): {text!r}")
    head, body = mt.groups()
    terms = _split_terms(body)
    if len(terms) != 3:
        raise ParseError(f"pattern must have exactly three terms, got {len(terms)}")
    if any(t.kind == LITERAL for t in terms[:2]):
        raise ParseError("literals may only appear in object position")
    try:
        pattern = TriplePattern(*terms)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if head.strip() != "*":
        selected = head.split()
        if not selected or not all(re.fullmatch(r"\?\w+", v) for v in selected):
            raise ParseError(f"bad select list {head!r}")
        missing = [v for v in selected if v[1:] not in pattern.variables()]
        if missing:
            raise UnboundSelectVariable(f"selected variables not in pattern: {missing}")
    return pattern


def render_query(q: TriplePattern) -> str:
    head = " ".join("?" + v for v in q.variables()) or "*"
    body = " ".join(f"<{t.text}>" if t.kind == IRI else t.canonical() for t in q.terms)
    return f"SELECT {head} WHERE ({body})"


def load_triples(lines: Iterable[str]) -> list[Triple]:
    out = []
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(Triple.parse(line))
    return out


def dump_triples(triples: Iterable[Triple]) -> str:
    return "".join(f"{t}\n" for t in triples)


def match_pattern(repo: Iterable[Triple], q: TriplePattern) -> set[Triple]:
    return {t for t in repo if q.matches(t)}


# -- ontology ------------------------------------------------------------

@dataclass(frozen=True)
class PropertySpec:
    kind: str
    domains: frozenset = frozenset()
    ranges: frozenset = frozenset()


@dataclass(frozen=True, eq=False)
class Ontology:
    classes: frozenset
    parent: dict
    level: dict
    properties: dict
    instance_class: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate(self)

    @cached_property
    def children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {c: [] for c in self.classes}
        for c, p in self.parent.items():
            kids[p].append(c)
        return kids

    @cached_property
    def leaves(self) -> tuple[str, ...]:
        return tuple(sorted(
            c for c in self.classes
            if self.level[c] == UPPER and not any(self.level[k] == UPPER for k in self.children[c])))

    @cached_property
    def _leaf_of(self) -> dict[str, str | None]:
        leafset = set(self.leaves)
        out = {}
        for c in self.classes:
            node, found = c, None
            while node is not None:
                if node in leafset:
                    found = node
                    break
                node = self.parent.get(node)
            out[c] = found
        return out

    @cached_property
    def _leaves_below(self) -> dict[str, frozenset]:
        # leaves in the subtree of each class (the class itself included)
        out: dict[str, set] = {c: set() for c in self.classes}
        for leaf in self.leaves:
            node = leaf
            while node is not None:
                out[node].add(leaf)
                node = self.parent.get(node)
        return {c: frozenset(v) for c, v in out.items()}

    def class_of(self, text: str) -> str | None:
        if text in self.instance_class:
            return self.instance_class[text]
        if text in self.classes:
            return text
        local = text.split(":", 1)[-1]
        return local if local in self.classes else None

    def with_instances(self, instances: dict[str, str]) -> "Ontology":
        merged = dict(self.instance_class)
        merged.update(instances)
        return Ontology(self.classes, self.parent, self.level, self.properties, merged)

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"name": c, **({"parent": self.parent[c]} if c in self.parent else {}), "level": self.level[c]}
                for c in sorted(self.classes)],
            "properties": [
                {"name": name, "kind": p.kind, "domains": sorted(p.domains), "ranges": sorted(p.ranges)}
                for name, p in sorted(self.properties.items())],
            "instances": [{"iri": i, "class": c} for i, c in sorted(self.instance_class.items())],
        }


def _validate(o: Ontology) -> None:
    if not o.classes:
        raise ValidationError("ontology declares no classes")
    for c in o.classes:
        if o.level.get(c) not in (UPPER, LOWER):
            raise ValidationError(f"class {c} has no valid level")
    for c, p in o.parent.items():
        if c not in o.classes:
            raise ValidationError(f"parent entry for undeclared class {c}")
        if p not in o.classes:
            raise ValidationError(f"class {c} has dangling parent {p}")
        if o.level[c] == UPPER and o.level[p] == LOWER:
            raise ValidationError(f"upper class {c} cannot sit below lower class {p}")
    for c in o.classes:
        seen, node = set(), c
        while node in o.parent:
            seen.add(node)
            node = o.parent[node]
            if node in seen:
                raise ValidationError(f"parent cycle through {node}")
        if o.level[node] != UPPER:
            raise ValidationError(f"lower class {c} does not reach an upper class")
    for name, spec in o.properties.items():
        if spec.kind not in (OBJECT_PROPERTY, DATATYPE_PROPERTY):
            raise ValidationError(f"property {name} has unknown kind {spec.kind}")
        unknown = (spec.domains | spec.ranges) - o.classes
        if unknown:
            raise ValidationError(f"property {name} references unknown classes {sorted(unknown)}")
        if spec.kind == OBJECT_PROPERTY and not spec.ranges:
            raise ValidationError(f"object property {name} needs a range")
    for iri, c in o.instance_class.items():
        if c not in o.classes:
            raise ValidationError(f"instance {iri} has unknown class {c}")


def ontology_from_dict(doc: dict) -> Ontology:
    try:
        classes, parent, level = set(), {}, {}
        for entry in doc.get("classes", []):
            name = entry["name"]
            if name in classes:
                raise ValidationError(f"duplicate class {name}")
            classes.add(name)
            level[name] = entry.get("level", UPPER)
            if entry.get("parent") is not None:
                parent[name] = entry["parent"]
        properties = {}
        for entry in doc.get("properties", []):
            properties[entry["name"]] = PropertySpec(
                entry["kind"], frozenset(entry.get("domains", [])), frozenset(entry.get("ranges", [])))
        instances = {e["iri"]: e["class"] for e in doc.get("instances", [])}
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed ontology document: {exc!r}") from None
    return Ontology(frozenset(classes), parent, level, properties, instances)


def load_ontology(source: str) -> Ontology:
    """Load an ontology from its JSON text."""
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ParseError(f"ontology is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("ontology document must be an object")
    return ontology_from_dict(doc)


def read_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return load_ontology(fh.read())


# -- clustering ----------------------------------------------------------

def leaf_clusters(o: Ontology) -> tuple[str, ...]:
    return o.leaves


def clusters_of_term(o: Ontology, t: Term) -> frozenset:
    if t.kind != IRI:
        return frozenset()
    cls = o.class_of(t.text)
    if cls is None or o._leaf_of[cls] is None:
        return frozenset()
    return frozenset([o._leaf_of[cls]])


def _covering_leaves(o: Ontology, cls: str) -> frozenset:
    # leaves whose subtree intersects cls's subtree: the leaf above cls, or the leaves below it
    above = o._leaf_of[cls]
    return frozenset([above]) if above is not None else o._leaves_below[cls]


def _property(o: Ontology, p: Term) -> PropertySpec:
    spec = o.properties.get(p.text) if p.kind == IRI else None
    if spec is None:
        raise UnknownProperty(p.text)
    return spec


def clusters_of_predicate(o: Ontology, p: Term) -> frozenset:
    spec = _property(o, p)
    classes = spec.ranges if spec.kind == OBJECT_PROPERTY else spec.domains
    out: set = set()
    for c in classes:
        out |= _covering_leaves(o, c)
    return frozenset(out)


def _combine(pred: frozenset, other: frozenset | None, universe: frozenset) -> frozenset:
    # other=None stands for a variable position: the universal set
    if other is None:
        inter, union = pred, universe
    else:
        inter, union = pred & other, pred | other
    if inter:
        return inter
    if union:
        return union
    return frozenset([DEFAULT_CLUSTER])


def clusters_of_triple(o: Ontology, t: Triple) -> frozenset:
    spec = _property(o, t.predicate)
    pred = clusters_of_predicate(o, t.predicate)
    anchor = t.object if spec.kind == OBJECT_PROPERTY else t.subject
    return _combine(pred, clusters_of_term(o, anchor), frozenset(o.leaves))


def clusters_of_pattern(o: Ontology, q: TriplePattern) -> frozenset:
    if q.predicate.is_var:
        raise UnsupportedPattern("variable predicates cannot be clustered")
    spec = _property(o, q.predicate)
    pred = clusters_of_predicate(o, q.predicate)
    anchor = q.object if spec.kind == OBJECT_PROPERTY else q.subject
    other = None if anchor.is_var else clusters_of_term(o, anchor)
    universe = frozenset(o.leaves) | {DEFAULT_CLUSTER}
    return _combine(pred, other, universe)
