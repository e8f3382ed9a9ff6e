# src/scenario/ontology_fixture.py - Ontology for a generated scenario: nodes, cross-system edges, curated hyperedges
# Every hyperedge goes through the regular review flow so attachment digests are pinned exactly as in production.

import logging
from pathlib import Path
from typing import TYPE_CHECKING

from ..core.builder import ReviewQueue, decide_review, submit_for_review
from ..core.ontology import ATTACHMENTS_DIR, OntologyStore, auto_instantiate_declaratives, save_ontology
from ..core.scripting import create_attachment_script
from ..models.access import Principal
from ..models.ontology import BinaryEdge, FieldSpec, GraphNode, Hyperedge, HyperedgeKind, JoinTriple
from ..models.review import DraftOrigin, HyperedgeDraft
from ..utils.cleanup import clear_path

if TYPE_CHECKING:
    from .generator import Layout, Scenario, TableSpec

logger = logging.getLogger(__name__)

# --- Configuration ---
SCRIPTS_DIR = Path(__file__).resolve().parent / "scripts"
DIAGNOSE_SCRIPT = "diagnose_fulfillment.py"
BOOTSTRAP = Principal(principal_id="bootstrap", roles=frozenset({"root"}))

PROCEDURAL_ID = "hyperedge:fulfillment_blockage_rca"
CHAIN_ID = "hyperedge:contract_fulfillment_chain"
OUTBOUND_ID = "hyperedge:outbound_execution_and_site_receipt"
DIRECT_ID = "hyperedge:direct_shipment_procurement"
MATERIAL_ID = "hyperedge:material_code_alignment"
NET_VALUE_ID = "hyperedge:sales_order_net_value"


def graph_node(spec: "TableSpec") -> GraphNode:
    return GraphNode(
        id=spec.node_id, name=spec.name, description=spec.description, source=spec.system, table=spec.physical,
        schema=[FieldSpec(name=c.name, semantic_annotation=c.annotation, value_kind=c.value_kind,
                          visibility_tier=c.tier) for c in spec.columns],
        query_template=spec.query_template,
    )


def binary_edges(layout: "Layout", planned: set[str]) -> list[BinaryEdge]:
    cf = layout.erp_contract_field
    pad = "zero-pad(10)" if layout.pad_material else "identity"
    definitions = [
        ("contract_type", "table:bpm_contract", "table:bpm_contract_type", [("contract_type", "type_code", "identity")]),
        ("contract_customer", "table:bpm_contract", "table:erp_customer",
         [("customer_code", "customer_code", "identity")]),
        ("contract_sales_order", "table:bpm_contract", "table:erp_sales_order", [("contract_no", cf, "identity")]),
        ("sales_order_customer", "table:erp_sales_order", "table:erp_customer",
         [("customer_code", "customer_code", "identity")]),
        ("sales_order_delivery_request", "table:erp_sales_order", "table:erp_delivery_request",
         [("so_no", "so_no", "identity")]),
        ("delivery_request_approval", "table:erp_delivery_request", "table:bpm_delivery_approval",
         [("request_no", "request_no", "identity")]),
        ("delivery_request_outbound", "table:erp_delivery_request", "table:wms_outbound_delivery",
         [("request_no", "request_ref", "case-fold" if layout.lowercase_refs else "identity")]),
        ("material_document_outbound", "table:erp_material_document", "table:wms_outbound_delivery",
         [("outbound_ref", "outbound_no", "strip-prefix(WMS-)" if layout.prefix_documents else "identity")]),
        ("outbound_site_receipt", "table:wms_outbound_delivery", "table:wms_site_receipt",
         [("outbound_no", "outbound_no", "identity")]),
        ("contract_purchase_order", "table:bpm_contract", "table:srm_purchase_order",
         [("contract_no", "contract_no", "identity")]),
        ("purchase_order_asn", "table:srm_purchase_order", "table:srm_vendor_asn", [("po_no", "po_no", "identity")]),
        ("purchase_order_supplier", "table:srm_purchase_order", "table:srm_supplier",
         [("supplier_code", "supplier_code", "identity")]),
        ("purchase_order_sales_order", "table:srm_purchase_order", "table:erp_sales_order",
         [("contract_no", cf, "identity"), ("material_code", "material_code", pad)]),
        ("inventory_sales_order", "table:wms_inventory", "table:erp_sales_order",
         [("material_code", "material_code", pad)]),
    ]
    return [
        BinaryEdge(id=f"edge:{name}", src=src, dst=dst, label=name.replace("_", " "),
                   join_spec=[JoinTriple(src_field=s, dst_field=d, transform=t) for s, d, t in triples])
        for name, src, dst, triples in definitions
        if src in planned and dst in planned
    ]


def curated_declaratives(layout: "Layout", planned: set[str]) -> list[Hyperedge]:
    cf = layout.erp_contract_field
    start = layout.contract_start_field
    chain_details = (
        f"A signed contract (BPM contract_no) is released to ERP as a sales order whose {cf} carries the same number. "
        "Fulfillment proceeds: delivery request raised against the sales order, delivery approval in BPM, "
        "outbound delivery in WMS, goods-issue material document in ERP, receipt at the customer site. "
        "A delivery request only counts once its status is EFFECTIVE; SUBMITTED means the approval is still PENDING. "
    )
    if start == "effective_date":
        chain_details += ("Both the contract and the delivery request carry a field named effective_date. On the "
                          "contract it is the date the contract takes legal effect; on the delivery request it is the "
                          "date the delivery application became effective. They are unrelated.")
    else:
        chain_details += "The contract start date is start_date; the delivery request effective_date is unrelated."

    outbound_details = (
        "Warehouse shipments create an outbound delivery per effective delivery request. Status CREATED means "
        "goods have not left; EXECUTED means goods issue happened. Every executed outbound must be mirrored by an "
        "ERP material document and confirmed by a site receipt. "
    )
    if layout.lowercase_refs:
        outbound_details += "The outbound request_ref stores the delivery request number lower-cased. "
    if layout.prefix_documents:
        outbound_details += "Material documents reference the outbound number with a WMS- prefix. "
    outbound_details += "Receipt quantities may differ from the shipped quantity; compare received_qty with qty."

    direct_details = (
        "Contracts with shipment_mode DIRECT bypass the warehouse: the supplier ships straight to the site and no "
        "outbound delivery is created. Progress is visible only through the purchase order and the supplier's "
        "advance shipping notice (ASN). A DIRECT contract whose purchase order has no ASN is stuck at the supplier."
    )
    material_details = (
        "ERP stores material numbers zero-padded to 10 digits; SRM and WMS store them without padding. Compare "
        "them after padding." if layout.pad_material else
        "All systems store material numbers in the same unpadded format."
    )
    candidates = [
        Hyperedge(id=CHAIN_ID, title="Contract Fulfillment Chain",
                  aliases=["contract to delivery chain", "fulfillment progress"],
                  description="How a signed contract flows from sales order through delivery request and approval.",
                  member_nodes=["table:bpm_contract", "table:erp_sales_order", "table:erp_delivery_request",
                                "table:bpm_delivery_approval", "table:erp_customer"],
                  semantic_details=chain_details),
        Hyperedge(id=OUTBOUND_ID, title="Outbound Execution and Site Receipt",
                  aliases=["warehouse shipment", "goods issue and receipt"],
                  description="Warehouse outbound delivery, ERP goods-issue posting and customer-site receipt.",
                  member_nodes=["table:erp_delivery_request", "table:wms_outbound_delivery",
                                "table:erp_material_document", "table:wms_site_receipt"],
                  semantic_details=outbound_details),
        Hyperedge(id=DIRECT_ID, title="Direct Shipment Procurement",
                  aliases=["drop shipment", "supplier direct delivery"],
                  description="Contracts fulfilled by suppliers shipping directly to the customer site.",
                  member_nodes=["table:bpm_contract", "table:srm_purchase_order", "table:srm_vendor_asn",
                                "table:srm_supplier"],
                  semantic_details=direct_details),
        Hyperedge(id=MATERIAL_ID, title="Material Code Alignment",
                  aliases=["material number format"],
                  description="How material numbers are spelled across ERP, SRM and WMS.",
                  member_nodes=["table:erp_sales_order", "table:srm_purchase_order", "table:wms_inventory",
                                "table:erp_material_document"],
                  semantic_details=material_details),
    ]
    if layout.opaque_metric:
        candidates.append(Hyperedge(
            id=NET_VALUE_ID, title="Sales Order Net Value", aliases=["net_value_agg"],
            description="Meaning of the undocumented net_value_agg column on sales orders.",
            member_nodes=["table:erp_sales_order"],
            semantic_details="net_value_agg is the order net value after rebates in contract currency. It is "
                             "recomputed nightly and is not the sum of line amounts.",
        ))
    kept = []
    for he in candidates:
        members = [m for m in he.member_nodes if m in planned]
        if members:
            kept.append(he.model_copy(update={"member_nodes": sorted(members)}))
    return kept


def procedural_hyperedge(planned: set[str], related: list[str]) -> tuple[Hyperedge, dict[str, str]]:
    relative = f"{ATTACHMENTS_DIR}/{DIAGNOSE_SCRIPT}"
    body = (SCRIPTS_DIR / DIAGNOSE_SCRIPT).read_text(encoding="utf-8")
    details = (
        "Diagnose why a contract has not completed fulfillment. Walk the chain and stop at the first stage that "
        "fails:\n"
        "1. Upstream: query contract, sales order, delivery request and delivery approval constrained on the "
        "contract number. If no delivery request exists the blockage is missing-delivery-request at "
        "table:erp_delivery_request. If the request status is not EFFECTIVE the blockage is "
        "delivery-application-not-effective at table:erp_delivery_request.\n"
        "2. If the contract shipment_mode is DIRECT, check purchase order and vendor ASN. A purchase order without "
        "ASN is direct-shipment-asn-missing at table:srm_vendor_asn.\n"
        "3. Downstream: query delivery request, outbound delivery, material document and site receipt constrained "
        "on the request number. Outbound status CREATED is outbound-not-executed at table:wms_outbound_delivery. "
        "An executed outbound without material document is erp-sync-gap at table:erp_material_document. "
        "A material document without site receipt is site-receipt-missing at table:wms_site_receipt.\n"
        "4. Otherwise fulfillment is healthy.\n"
        "Name exactly one blockage kind and its blocking stage node id, citing the evidence that shows it. "
        f"The attachment {relative} applies the same rules to key=value facts "
        "(dr_rows, dr_status, shipment_mode, po_rows, asn_rows, ob_status, md_rows, receipt_rows)."
    )
    members = [m for m in ("table:bpm_contract", "table:erp_sales_order", "table:erp_delivery_request",
                           "table:bpm_delivery_approval", "table:wms_outbound_delivery",
                           "table:erp_material_document", "table:wms_site_receipt", "table:srm_purchase_order",
                           "table:srm_vendor_asn") if m in planned]
    he = Hyperedge(
        id=PROCEDURAL_ID, title="Order Fulfillment Blockage Root-Cause Analysis",
        aliases=["not completed fulfillment", "fulfillment blockage"],
        description="Step-by-step protocol for finding the stage where a contract's fulfillment is stuck.",
        kind=HyperedgeKind.PROCEDURAL, member_nodes=members, semantic_details=details,
        related_hyperedges=related, attachments=[relative],
    )
    return he, {relative: create_attachment_script(body, PROCEDURAL_ID)}


def _approve(store: OntologyStore, queue: ReviewQueue, he: Hyperedge, origin: DraftOrigin,
             scripts: dict[str, str] | None = None) -> None:
    draft = HyperedgeDraft(candidate=he, author=BOOTSTRAP.principal_id, origin=origin,
                           attachment_scripts=scripts or {})
    ticket = submit_for_review(draft, BOOTSTRAP, queue, store.snapshot)
    decide_review(queue, store, ticket.ticket_id, "approve", BOOTSTRAP, note="scenario bootstrap")


def emit_ontology(scenario: "Scenario") -> OntologyStore:
    """Writes nodes and edges, then approves curated, procedural and auto-instantiated hyperedges in that order."""
    root = scenario.ontology_root
    clear_path(root)
    planned = set(scenario.tables)
    nodes = [graph_node(spec) for _, spec in sorted(scenario.tables.items())]
    store = OntologyStore.from_entities(nodes, binary_edges(scenario.layout, planned))
    save_ontology(store, root)
    store.bind(root)
    queue = ReviewQueue(root)

    declaratives = curated_declaratives(scenario.layout, planned)
    for he in declaratives:
        _approve(store, queue, he, DraftOrigin.HUMAN)
    related = [h.id for h in declaratives if h.id in (CHAIN_ID, OUTBOUND_ID, DIRECT_ID)]
    procedural, scripts = procedural_hyperedge(planned, related)
    _approve(store, queue, procedural, DraftOrigin.HUMAN, scripts)
    for draft in auto_instantiate_declaratives(store):
        _approve(store, queue, draft, DraftOrigin.AUTO_INSTANTIATED)

    logger.info(f"Scenario Ontology: {len(store.snapshot.nodes)} nodes, {len(store.snapshot.edges)} edges, "
                f"{len(store.snapshot.hyperedges)} hyperedges at {root}")
    return store
