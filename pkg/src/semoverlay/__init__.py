"""Two-level semantic overlay network: ontology clustering, a small-world
ring of semantic clusters, and Chord or flooding overlays inside clusters."""

from .identity import ClusterKey, IdParams, PeerId, hash_bits, make_peer_id, ring_distance
from .semantics import (Ontology, Term, Triple, TriplePattern, clusters_of_pattern, clusters_of_predicate,
                        clusters_of_term, clusters_of_triple, leaf_clusters, load_ontology, match_pattern,
                        parse_query, read_ontology, render_query)

__version__ = "0.1.0"
