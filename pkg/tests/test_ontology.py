# tests/test_ontology.py - Ontology store: load/save, validation rules, mutation, auto-instantiation

import pytest

from src.core.documents import read_document, write_document
from src.core.errors import MutationRejected, OntologyParseError, OntologyValidationError, WriteContention
from src.core.ontology import (
    OntologyStore,
    auto_instantiate_declaratives,
    load_ontology,
    mutate,
    recompute_incidence,
    save_ontology,
    validate,
)
from src.models.ontology import BinaryEdge, Change, GraphNode, Hyperedge, HyperedgeKind, JoinTriple, Lifecycle
from tests.conftest import CHAIN, CUSTOMER, PURCHASE_ORDER, RECEIPT, SALES_ORDER, mini_edges, mini_hyperedges, mini_nodes


def rules(report) -> set[str]:
    return {v.rule for v in report.errors()}


# --- Load / save ---

def test_save_then_load_preserves_entities(mini_store, tmp_path):
    save_ontology(mini_store, tmp_path / "onto")
    loaded = load_ontology(tmp_path / "onto")
    assert set(loaded.snapshot.nodes) == set(CHAIN)
    assert loaded.snapshot.digest() == mini_store.snapshot.digest()
    assert loaded.root == tmp_path / "onto"


def test_documents_carry_format_version(mini_store, tmp_path):
    save_ontology(mini_store, tmp_path / "onto")
    text = (tmp_path / "onto" / "nodes" / "table_erp_customer.yaml").read_text()
    assert text.startswith("format_version: 1")


def test_save_removes_stale_documents(mini_store, tmp_path):
    root = tmp_path / "onto"
    save_ontology(mini_store, root)
    stale = root / "hyperedges" / "hyperedge_gone.yaml"
    write_document(stale, {"id": "hyperedge:gone", "title": "Gone"})
    save_ontology(mini_store, root)
    assert not stale.exists()


def test_load_rejects_wrong_format_version(mini_store, tmp_path):
    root = tmp_path / "onto"
    save_ontology(mini_store, root)
    path = root / "nodes" / "table_erp_customer.yaml"
    path.write_text(path.read_text().replace("format_version: 1", "format_version: 2"))
    with pytest.raises(OntologyParseError) as exc:
        load_ontology(root)
    assert exc.value.path == str(path)


def test_load_reports_yaml_syntax_line(mini_store, tmp_path):
    root = tmp_path / "onto"
    save_ontology(mini_store, root)
    path = root / "edges" / "edge_customer_orders.yaml"
    path.write_text("format_version: 1\nid: [unclosed\n")
    with pytest.raises(OntologyParseError) as exc:
        load_ontology(root)
    assert exc.value.line is not None


def test_load_is_all_or_nothing_on_invariant_violation(mini_store, tmp_path):
    root = tmp_path / "onto"
    save_ontology(mini_store, root)
    data = read_document(root / "edges" / "edge_po_receipts.yaml")
    data["dst"] = "table:nowhere"
    write_document(root / "edges" / "edge_po_receipts.yaml", data)
    with pytest.raises(OntologyValidationError) as exc:
        load_ontology(root)
    assert "dangling" in rules(exc.value.report)


def test_load_missing_root(tmp_path):
    with pytest.raises(OntologyParseError):
        load_ontology(tmp_path / "absent")


# --- Validation ---

def test_mini_ontology_is_valid(mini_store):
    report = validate(mini_store)
    assert report.ok, report.errors()


@pytest.mark.parametrize("mutation, rule", [
    (lambda n, e, h: n.append(GraphNode(id="table:x", name="X", source="CRM", table="x")), "registered-source"),
    (lambda n, e, h: e.append(BinaryEdge(id="edge:loop", src=CUSTOMER, dst=CUSTOMER,
                                         join_spec=[JoinTriple(src_field="customer_code", dst_field="customer_code")])),
     "self-loop"),
    (lambda n, e, h: e.append(BinaryEdge(id="edge:bad_field", src=CUSTOMER, dst=SALES_ORDER,
                                         join_spec=[JoinTriple(src_field="nope", dst_field="so_no")])),
     "join-field"),
    (lambda n, e, h: h.append(Hyperedge(id="hyperedge:dup_title", title="ORDER BOOK", member_nodes=[CUSTOMER])),
     "unique-title"),
    (lambda n, e, h: h.append(Hyperedge(id="hyperedge:empty", title="Empty", lifecycle=Lifecycle.APPROVED)),
     "non-empty-members"),
    (lambda n, e, h: h.append(Hyperedge(id="hyperedge:me", title="Me", member_nodes=[CUSTOMER],
                                        related_hyperedges=["hyperedge:me"])),
     "self-reference"),
    (lambda n, e, h: h.append(Hyperedge(id="hyperedge:attached", title="Attached", member_nodes=[CUSTOMER],
                                        attachments=["attachments/run.py"])),
     "attachment-kind"),
    (lambda n, e, h: h.append(Hyperedge(id=CUSTOMER, title="Clash", member_nodes=[CUSTOMER])), "unique-id"),
])
def test_validation_rules(mutation, rule):
    nodes, edges, hyperedges = mini_nodes(), mini_edges(), mini_hyperedges()
    mutation(nodes, edges, hyperedges)
    report = validate(OntologyStore.from_entities(nodes, edges, hyperedges))
    assert not report.ok
    assert rule in rules(report)


def test_placeholder_must_name_a_field():
    nodes = mini_nodes()
    nodes[1] = nodes[1].model_copy(update={"query_template": "SELECT * FROM erp_sales_order WHERE region = :region"})
    report = validate(OntologyStore.from_entities(nodes, mini_edges(), mini_hyperedges()))
    assert "placeholder-field" in rules(report)


def test_self_referential_flag_allows_loop():
    edges = mini_edges() + [BinaryEdge(id="edge:parent_customer", src=CUSTOMER, dst=CUSTOMER, self_referential=True,
                                       join_spec=[JoinTriple(src_field="customer_code", dst_field="customer_code")])]
    assert validate(OntologyStore.from_entities(mini_nodes(), edges, mini_hyperedges())).ok


def test_attachment_outside_root_is_an_error(tmp_path):
    hyperedges = mini_hyperedges() + [Hyperedge(
        id="hyperedge:escape", title="Escape", kind=HyperedgeKind.PROCEDURAL, member_nodes=[CUSTOMER],
        attachments=["../outside.py"])]
    store = OntologyStore.from_entities(mini_nodes(), mini_edges(), hyperedges, root=tmp_path)
    assert "attachment-root" in rules(validate(store))


def test_missing_attachment_and_unlisted_mention_are_warnings(tmp_path):
    hyperedges = mini_hyperedges() + [
        Hyperedge(id="hyperedge:missing", title="Missing Script", kind=HyperedgeKind.PROCEDURAL,
                  member_nodes=[CUSTOMER], attachments=["attachments/missing.py"]),
        Hyperedge(id="hyperedge:mention", title="Mentions Script", kind=HyperedgeKind.PROCEDURAL,
                  member_nodes=[CUSTOMER], semantic_details="Run the attachment check_rates.py first."),
    ]
    report = validate(OntologyStore.from_entities(mini_nodes(), mini_edges(), hyperedges, root=tmp_path))
    assert report.ok
    assert {v.rule for v in report.warnings()} == {"attachment-missing", "attachment-mention"}


# --- Unified graph ---

def test_incidence_matches_member_nodes(mini_store):
    unified = mini_store.snapshot.unified()
    assert ("table:erp_customer", "hyperedge:order_book") in unified.incidence_edges
    assert ("hyperedge:order_book", "hyperedge:procurement_trace") in unified.inter_hyperedge_edges
    assert unified.base_nodes == frozenset(CHAIN)
    assert (unified.incidence_edges, unified.inter_hyperedge_edges) == recompute_incidence(
        mini_store.snapshot.hyperedges.values())


def test_incident_hyperedges_skip_retired(mini_store):
    mutate(mini_store, Change(op="retire", entity="hyperedge", entity_id="hyperedge:order_book"))
    ids = {h.id for h in mini_store.snapshot.incident_hyperedges(CUSTOMER)}
    assert ids == set()
    assert {h.id for h in mini_store.snapshot.incident_hyperedges(CUSTOMER, include_retired=True)} == {
        "hyperedge:order_book"}


# --- Mutation ---

def test_add_node_bumps_version(mini_store):
    before = mini_store.snapshot.version
    payload = {"id": "table:wms_inventory", "name": "Inventory", "source": "WMS", "table": "wms_inventory"}
    mutate(mini_store, Change(op="add", entity="node", payload=payload))
    assert mini_store.snapshot.version == before + 1
    assert "table:wms_inventory" in mini_store.snapshot.nodes


def test_add_duplicate_is_rejected(mini_store):
    payload = mini_nodes()[0].model_dump(by_alias=True)
    with pytest.raises(MutationRejected) as exc:
        mutate(mini_store, Change(op="add", entity="node", payload=payload))
    assert rules(exc.value.report) == {"unique-id"}


def test_rejected_change_leaves_store_unchanged(mini_store):
    before = mini_store.snapshot
    payload = {"id": "edge:broken", "src": CUSTOMER, "dst": "table:ghost",
               "join_spec": [{"src_field": "customer_code", "dst_field": "customer_code"}]}
    with pytest.raises(MutationRejected):
        mutate(mini_store, Change(op="add", entity="edge", payload=payload))
    assert mini_store.snapshot is before


def test_update_hyperedge_refreshes_incidence(mini_store):
    mutate(mini_store, Change(op="update", entity="hyperedge", entity_id="hyperedge:order_book",
                              payload={"member_nodes": [CUSTOMER]}))
    incidence = mini_store.snapshot.incidence
    assert (SALES_ORDER, "hyperedge:order_book") not in incidence
    assert validate(mini_store).ok


def test_retire_node_with_dependents_is_rejected(mini_store):
    with pytest.raises(MutationRejected) as exc:
        mutate(mini_store, Change(op="retire", entity="node", entity_id=PURCHASE_ORDER))
    assert rules(exc.value.report) == {"dependency"}


def test_retire_hyperedge_marks_it_retired(mini_store):
    mutate(mini_store, Change(op="retire", entity="hyperedge", entity_id="hyperedge:order_book"))
    assert mini_store.snapshot.hyperedges["hyperedge:order_book"].lifecycle == Lifecycle.RETIRED
    assert "hyperedge:order_book" not in {h.id for h in mini_store.snapshot.approved_hyperedges()}


def test_retire_related_hyperedge_is_rejected(mini_store):
    with pytest.raises(MutationRejected) as exc:
        mutate(mini_store, Change(op="retire", entity="hyperedge", entity_id="hyperedge:procurement_trace"))
    assert rules(exc.value.report) == {"dependency"}


def test_unknown_update_is_rejected(mini_store):
    with pytest.raises(MutationRejected) as exc:
        mutate(mini_store, Change(op="update", entity="hyperedge", entity_id="hyperedge:nope", payload={}))
    assert rules(exc.value.report) == {"unknown"}


def test_invalid_payload_is_a_schema_rejection(mini_store):
    with pytest.raises(MutationRejected) as exc:
        mutate(mini_store, Change(op="add", entity="hyperedge", payload={"id": "hyperedge:x", "title": "X",
                                                                         "scope": "planet:mars"}))
    assert rules(exc.value.report) == {"schema"}


def test_accepted_mutation_is_persisted_when_bound(mini_store, tmp_path):
    root = tmp_path / "onto"
    save_ontology(mini_store, root)
    mini_store.bind(root)
    mutate(mini_store, Change(op="update", entity="node", entity_id=CUSTOMER, payload={"description": "Renamed"}))
    assert load_ontology(root).snapshot.nodes[CUSTOMER].description == "Renamed"


def test_single_writer(mini_store):
    with mini_store.writer():
        with pytest.raises(WriteContention):
            with mini_store.writer():
                pass


# --- Auto-instantiation ---

def test_auto_instantiate_covers_unbound_nodes(mini_store):
    drafts = auto_instantiate_declaratives(mini_store)
    members = {d.member_nodes[0] for d in drafts}
    # customer, sales_order (order_book) and purchase_order (draft_idea) already have declaratives
    assert members == {RECEIPT}
    draft = drafts[0]
    assert draft.id == "hyperedge:declarative_wms_receipt"
    assert draft.title == "Declarative: Site Receipt"
    assert draft.lifecycle == Lifecycle.DRAFT
    assert "received_qty (quantity)" in draft.semantic_details


def test_auto_instantiate_on_bare_graph():
    store = OntologyStore.from_entities(mini_nodes(), mini_edges())
    drafts = auto_instantiate_declaratives(store)
    assert len(drafts) == len(CHAIN)
    assert len({d.title.casefold() for d in drafts}) == len(drafts)
