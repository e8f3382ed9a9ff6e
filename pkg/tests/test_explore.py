# tests/test_explore.py - Adjacency inspection and bounded path discovery

import random

import networkx as nx
import pytest

from src.core.errors import DepthBoundExceeded, ModeViolation, RetiredHyperedge, UnknownEntity
from src.core.explore import discover_paths, inspect_adjacency, related_hyperedges
from src.core.ontology import OntologyStore, mutate
from src.models.ontology import BinaryEdge, Change, FieldSpec, GraphNode, JoinTriple
from tests.conftest import CUSTOMER, PURCHASE_ORDER, RECEIPT, SALES_ORDER


def random_graph(rng: random.Random) -> tuple[OntologyStore, nx.Graph]:
    count = rng.randrange(2, 8)
    ids = [f"table:n{i}" for i in range(count)]
    nodes = [GraphNode(id=i, name=i, source="ERP", table=i.split(":")[1], schema=[FieldSpec(name="k")]) for i in ids]
    edges, reference = [], nx.Graph()
    reference.add_nodes_from(ids)
    for n in range(rng.randrange(0, count * 2)):
        a, b = rng.choice(ids), rng.choice(ids)
        edges.append(BinaryEdge(id=f"edge:{n}", src=a, dst=b, self_referential=a == b,
                                join_spec=[JoinTriple(src_field="k", dst_field="k")]))
        if a != b:
            reference.add_edge(a, b)
    return OntologyStore.from_entities(nodes, edges), reference


def test_paths_match_simple_path_enumeration():
    rng = random.Random(5)
    for _ in range(100):
        store, reference = random_graph(rng)
        src, dst = rng.sample(sorted(reference.nodes), 2)
        depth = rng.randrange(1, 7)
        result = discover_paths(store.snapshot, src, dst, depth, path_cap=10**6)
        expected = {tuple(p) for p in nx.all_simple_paths(reference, src, dst, cutoff=depth)}
        assert set(result.id_paths()) == expected
        assert len(result.id_paths()) == len(expected)
        assert all(len(p) - 1 <= depth for p in result.id_paths())


def test_paths_are_ordered_by_length():
    rng = random.Random(8)
    store, reference = random_graph(rng)
    while reference.number_of_edges() < 4:
        store, reference = random_graph(rng)
    src, dst = sorted(reference.nodes)[:2]
    lengths = [len(p) for p in discover_paths(store.snapshot, src, dst, 6, path_cap=10**6).id_paths()]
    assert lengths == sorted(lengths)


def test_base_chain(mini_store):
    result = discover_paths(mini_store.snapshot, CUSTOMER, RECEIPT, 3)
    assert result.id_paths() == [(CUSTOMER, SALES_ORDER, PURCHASE_ORDER, RECEIPT)]
    assert discover_paths(mini_store.snapshot, CUSTOMER, RECEIPT, 2).id_paths() == []


def test_path_cap_truncates(mini_store):
    result = discover_paths(mini_store.snapshot, CUSTOMER, RECEIPT, 6, kind_filter="all-kinds", path_cap=1)
    assert result.truncated
    assert len(result.paths) == 1


def test_all_kinds_paths_cross_hyperedges(mini_store):
    result = discover_paths(mini_store.snapshot, CUSTOMER, RECEIPT, 3, kind_filter="all-kinds")
    paths = result.id_paths()
    assert (CUSTOMER, "hyperedge:order_book", "hyperedge:procurement_trace", RECEIPT) in paths
    assert not any("hyperedge:draft_idea" in p for p in paths)
    kinds = {e.kind for path in result.paths for e in path}
    assert kinds == {"base", "hyperedge"}


def test_same_endpoint_is_a_single_path(mini_store):
    assert discover_paths(mini_store.snapshot, CUSTOMER, CUSTOMER, 1).id_paths() == [(CUSTOMER,)]


@pytest.mark.parametrize("depth", [0, 7])
def test_depth_bounds(mini_store, depth):
    with pytest.raises(DepthBoundExceeded):
        discover_paths(mini_store.snapshot, CUSTOMER, RECEIPT, depth)


def test_hyperedge_endpoint_needs_all_kinds(mini_store):
    with pytest.raises(ModeViolation):
        discover_paths(mini_store.snapshot, CUSTOMER, "hyperedge:order_book", 2)
    result = discover_paths(mini_store.snapshot, CUSTOMER, "hyperedge:order_book", 1, kind_filter="all-kinds")
    assert result.id_paths() == [(CUSTOMER, "hyperedge:order_book")]


def test_retired_and_unknown_endpoints(mini_store):
    mutate(mini_store, Change(op="retire", entity="hyperedge", entity_id="hyperedge:order_book"))
    with pytest.raises(RetiredHyperedge):
        discover_paths(mini_store.snapshot, CUSTOMER, "hyperedge:order_book", 2, kind_filter="all-kinds")
    with pytest.raises(UnknownEntity):
        discover_paths(mini_store.snapshot, CUSTOMER, "table:ghost", 2)


def test_inspect_adjacency(mini_store):
    report = inspect_adjacency(mini_store.snapshot, SALES_ORDER)
    assert [(n.direction, n.node_id) for n in report.neighbors] == [("in", CUSTOMER), ("out", PURCHASE_ORDER)]
    assert "so_no -> so_ref [case-fold]" in report.neighbors[1].join_spec
    assert {h.id for h in report.incident_hyperedges} == {
        "hyperedge:order_book", "hyperedge:procurement_trace", "hyperedge:tenant_backlog"}


def test_inspect_adjacency_rejects_hyperedges(mini_store):
    with pytest.raises(ModeViolation):
        inspect_adjacency(mini_store.snapshot, "hyperedge:order_book")
    with pytest.raises(UnknownEntity):
        inspect_adjacency(mini_store.snapshot, "table:ghost")


def test_related_hyperedges(mini_store):
    assert [s.id for s in related_hyperedges(mini_store.snapshot, "hyperedge:order_book")] == [
        "hyperedge:procurement_trace"]
    assert related_hyperedges(mini_store.snapshot, "hyperedge:procurement_trace") == []
