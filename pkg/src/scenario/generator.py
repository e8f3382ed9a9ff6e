# src/scenario/generator.py - Synthetic order-fulfillment snapshots with injected anomalies and blockages
# One SQLite store per business system. Every blocked contract carries exactly one data defect,
# checked afterwards against the merged stores by the injector's own verifier.

import logging
import random
import sqlite3
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Optional

from ..core.documents import write_document
from ..core.errors import ScenarioConfigError
from ..core.substrate import quote_ident
from ..models.scenario import (
    BLOCKING_STAGE, DEFAULT_TABLE_PLAN, AnomalyKind, BlockageKind, BlockageLabel, ScenarioConfig,
)
from ..utils.cleanup import clear_path
from .ontology_fixture import emit_ontology
from .questions import generate_questions, save_questions
from .reference import MergedView, merged_view

logger = logging.getLogger(__name__)

# --- Configuration ---
SYSTEM_STORES = {"BPM": "bpm.db", "ERP": "erp.db", "SRM": "srm.db", "WMS": "wms.db"}
LABELS_FILE = "labels.yaml"
QUESTIONS_FILE = "questions.yaml"
ENGINE_CONFIG_FILE = "engine.yaml"
SITES = ("SITE-N", "SITE-S", "SITE-E", "SITE-W")
CONTRACT_TYPES = (("STD", "Standard supply contract"), ("FRAME", "Frame agreement with call-offs"),
                  ("SPOT", "Spot purchase"))
REGIONS = ("North", "South", "East", "West")
MATERIAL_WIDTH = 10
DOCUMENT_PREFIX = "WMS-"
BASE_DATE = date(2024, 1, 8)

# tables a blockage kind cannot be expressed without
REQUIRED_TABLES: dict[BlockageKind, tuple[str, ...]] = {
    BlockageKind.MISSING_DELIVERY_REQUEST: ("table:erp_delivery_request",),
    BlockageKind.DELIVERY_APPLICATION_NOT_EFFECTIVE: ("table:erp_delivery_request", "table:bpm_delivery_approval"),
    BlockageKind.OUTBOUND_NOT_EXECUTED: ("table:erp_delivery_request", "table:wms_outbound_delivery"),
    BlockageKind.SITE_RECEIPT_MISSING: ("table:wms_outbound_delivery", "table:erp_material_document",
                                        "table:wms_site_receipt"),
    BlockageKind.DIRECT_SHIPMENT_ASN_MISSING: ("table:srm_purchase_order", "table:srm_vendor_asn"),
    BlockageKind.ERP_SYNC_GAP: ("table:wms_outbound_delivery", "table:erp_material_document"),
}
CORE_TABLES = ("table:bpm_contract", "table:erp_sales_order")


@dataclass(frozen=True)
class Column:
    name: str
    sql_type: str
    value_kind: str = "free-text"
    annotation: str = ""
    tier: int = 0


@dataclass
class TableSpec:
    node_id: str
    system: str
    physical: str
    name: str
    description: str
    columns: list[Column]
    query_template: str = ""

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class Layout:
    """Concrete spelling decisions that follow from the drawn anomalies."""

    anomalies: frozenset[AnomalyKind]
    erp_contract_field: str
    contract_start_field: str
    pad_material: bool
    lowercase_refs: bool
    prefix_documents: bool
    opaque_metric: bool
    opaque_tables: bool

    def material(self, code: str) -> str:
        return code.rjust(MATERIAL_WIDTH, "0") if self.pad_material else code

    def request_ref(self, request_no: str) -> str:
        return request_no.lower() if self.lowercase_refs else request_no

    def outbound_ref(self, outbound_no: str) -> str:
        return f"{DOCUMENT_PREFIX}{outbound_no}" if self.prefix_documents else outbound_no


@dataclass
class Scenario:
    config: ScenarioConfig
    root: Path
    layout: Layout
    tables: dict[str, TableSpec]
    sources: dict[str, Path]
    labels: list[BlockageLabel]
    contracts: list[str]

    @property
    def ontology_root(self) -> Path:
        return self.root / "ontology"

    @property
    def engine_config(self) -> Path:
        return self.root / ENGINE_CONFIG_FILE


def draw_layout(config: ScenarioConfig, rng: random.Random) -> Layout:
    drawn = frozenset(kind for kind in AnomalyKind if rng.random() < config.anomaly(kind))
    return Layout(
        anomalies=drawn,
        erp_contract_field="contract_code" if AnomalyKind.IDENTIFIER_INCONSISTENCY in drawn else "contract_no",
        contract_start_field="effective_date" if AnomalyKind.FIELD_EQUIVOCATION in drawn else "start_date",
        pad_material=AnomalyKind.FORMAT_DISCREPANCY in drawn,
        lowercase_refs=AnomalyKind.FORMAT_DISCREPANCY in drawn,
        prefix_documents=AnomalyKind.FORMAT_DISCREPANCY in drawn,
        opaque_metric=AnomalyKind.OPAQUE_METRIC in drawn,
        opaque_tables=AnomalyKind.SCHEMA_AMBIGUITY in drawn,
    )


def table_specs(layout: Layout, plan: list[str]) -> dict[str, TableSpec]:
    """Schemas of the planned tables. Physical names turn opaque under schema ambiguity."""
    cf = layout.erp_contract_field
    material_note = ("Material number, zero-padded to 10 digits" if layout.pad_material
                     else "Material number")

    def physical(logical: str, opaque: str) -> str:
        return opaque if layout.opaque_tables else logical

    so_columns = [
        Column("so_no", "TEXT", "identifier", "Sales order number"),
        Column(cf, "TEXT", "identifier", "Contract the sales order was raised against"),
        Column("customer_code", "TEXT", "identifier", "Sold-to customer"),
        Column("material_code", "TEXT", "identifier", material_note),
        Column("qty", "INTEGER", "quantity", "Ordered quantity"),
        Column("created_on", "TEXT", "timestamp", "Creation date"),
    ]
    if layout.opaque_metric:
        so_columns.append(Column("net_value_agg", "REAL", "quantity", ""))

    specs = [
        TableSpec("table:bpm_contract", "BPM", physical("bpm_contract", "t_ctr_main"), "Sales Contract",
                  "Signed customer contracts from the contract approval workflow.", [
                      Column("contract_no", "TEXT", "identifier", "Contract number, e.g. HT-0007"),
                      Column("customer_code", "TEXT", "identifier", "Customer the contract was signed with"),
                      Column("contract_type", "TEXT", "status-code", "Contract type code"),
                      Column("signed_on", "TEXT", "timestamp", "Signing date"),
                      Column(layout.contract_start_field, "TEXT", "timestamp", "Date the contract takes legal effect"),
                      Column("shipment_mode", "TEXT", "status-code",
                             "WAREHOUSE (ships through a warehouse) or DIRECT (supplier ships to site)"),
                      Column("amount", "REAL", "quantity", "Contract value", tier=1),
                      Column("status", "TEXT", "status-code", "Workflow status"),
                  ]),
        TableSpec("table:bpm_delivery_approval", "BPM", physical("bpm_delivery_approval", "t_dlv_appr"),
                  "Delivery Approval", "Approval decisions on delivery applications.", [
                      Column("approval_id", "TEXT", "identifier", "Approval record id"),
                      Column("request_no", "TEXT", "identifier", "Delivery request under approval"),
                      Column("contract_no", "TEXT", "identifier", "Contract number"),
                      Column("state", "TEXT", "status-code", "APPROVED or PENDING"),
                      Column("decided_on", "TEXT", "timestamp", "Decision date, empty while pending"),
                  ]),
        TableSpec("table:bpm_contract_type", "BPM", physical("bpm_contract_type", "t_ctr_type"),
                  "Contract Type", "Catalogue of contract types.", [
                      Column("type_code", "TEXT", "identifier", "Contract type code"),
                      Column("description", "TEXT", "free-text", "Meaning of the type"),
                  ]),
        TableSpec("table:erp_customer", "ERP", physical("erp_customer", "zcust_master"), "Customer Master",
                  "Customer master data.", [
                      Column("customer_code", "TEXT", "identifier", "Customer number"),
                      Column("customer_name", "TEXT", "free-text", "Customer name"),
                      Column("region", "TEXT", "free-text", "Sales region"),
                  ]),
        TableSpec("table:erp_sales_order", "ERP", physical("erp_sales_order", "zsd_so_hdr"), "Sales Order Header",
                  "Sales orders created from signed contracts.", so_columns),
        TableSpec("table:erp_delivery_request", "ERP", physical("erp_delivery_request", "zsd_dlv_req"),
                  "Delivery Request", "Delivery applications raised against sales orders.", [
                      Column("request_no", "TEXT", "identifier", "Delivery request number, e.g. DR-000007"),
                      Column("so_no", "TEXT", "identifier", "Sales order"),
                      Column(cf, "TEXT", "identifier", "Contract number"),
                      Column("status", "TEXT", "status-code", "SUBMITTED or EFFECTIVE"),
                      Column("effective_date", "TEXT", "timestamp", "Date the delivery application became effective"),
                  ]),
        TableSpec("table:erp_material_document", "ERP", physical("erp_material_document", "zmm_matdoc"),
                  "Material Document", "Goods-issue postings synchronized from warehouse outbound deliveries.", [
                      Column("doc_no", "TEXT", "identifier", "Material document number"),
                      Column("outbound_ref", "TEXT", "identifier",
                             "Outbound delivery reference, prefixed with WMS-" if layout.prefix_documents
                             else "Outbound delivery reference"),
                      Column("material_code", "TEXT", "identifier", material_note),
                      Column("qty", "INTEGER", "quantity", "Posted quantity"),
                      Column("posted_on", "TEXT", "timestamp", "Posting date"),
                  ]),
        TableSpec("table:srm_purchase_order", "SRM", "srm_purchase_order", "Purchase Order",
                  "Purchase orders placed with suppliers for contract demand.", [
                      Column("po_no", "TEXT", "identifier", "Purchase order number"),
                      Column("contract_no", "TEXT", "identifier", "Contract the demand comes from"),
                      Column("supplier_code", "TEXT", "identifier", "Supplier"),
                      Column("material_code", "TEXT", "identifier", "Material number without padding"),
                      Column("qty", "INTEGER", "quantity", "Ordered quantity"),
                  ]),
        TableSpec("table:srm_vendor_asn", "SRM", "srm_vendor_asn", "Vendor ASN",
                  "Advance shipping notices sent by suppliers.", [
                      Column("asn_no", "TEXT", "identifier", "ASN number"),
                      Column("po_no", "TEXT", "identifier", "Purchase order"),
                      Column("shipped_qty", "INTEGER", "quantity", "Shipped quantity"),
                      Column("shipped_on", "TEXT", "timestamp", "Ship date"),
                  ]),
        TableSpec("table:srm_supplier", "SRM", "srm_supplier", "Supplier", "Supplier master data.", [
            Column("supplier_code", "TEXT", "identifier", "Supplier number"),
            Column("supplier_name", "TEXT", "free-text", "Supplier name"),
            Column("rating", "TEXT", "status-code", "Internal supplier rating", tier=1),
        ]),
        TableSpec("table:wms_outbound_delivery", "WMS", "wms_outbound_delivery", "Outbound Delivery",
                  "Warehouse outbound deliveries executing delivery requests.", [
                      Column("outbound_no", "TEXT", "identifier", "Outbound delivery number"),
                      Column("request_ref", "TEXT", "identifier",
                             "Delivery request number, lower-cased" if layout.lowercase_refs
                             else "Delivery request number"),
                      Column("qty", "INTEGER", "quantity", "Quantity to ship"),
                      Column("status", "TEXT", "status-code", "CREATED or EXECUTED"),
                      Column("executed_on", "TEXT", "timestamp", "Goods-issue date, empty until executed"),
                  ]),
        TableSpec("table:wms_site_receipt", "WMS", "wms_site_receipt", "Site Receipt",
                  "Receipts confirmed at the customer site.", [
                      Column("receipt_no", "TEXT", "identifier", "Receipt number"),
                      Column("outbound_no", "TEXT", "identifier", "Outbound delivery received"),
                      Column("received_qty", "INTEGER", "quantity", "Quantity received"),
                      Column("received_on", "TEXT", "timestamp", "Receipt date"),
                      Column("site", "TEXT", "identifier", "Receiving site"),
                  ]),
        TableSpec("table:wms_inventory", "WMS", "wms_inventory", "Inventory", "On-hand stock per material and site.", [
            Column("material_code", "TEXT", "identifier", "Material number without padding"),
            Column("site", "TEXT", "identifier", "Site"),
            Column("on_hand", "INTEGER", "quantity", "On-hand quantity"),
        ], query_template="SELECT material_code, site, on_hand FROM wms_inventory WHERE site = :site"),
    ]
    return {spec.node_id: spec for spec in specs if spec.node_id in plan}


def check_config(config: ScenarioConfig) -> None:
    plan = set(config.table_plan)
    unknown = sorted(plan - set(DEFAULT_TABLE_PLAN))
    if unknown:
        raise ScenarioConfigError(f"table_plan names unknown tables: {unknown}", {"unknown": unknown})
    missing_core = [t for t in CORE_TABLES if t not in plan]
    if missing_core:
        raise ScenarioConfigError(f"table_plan must include {missing_core}", {"missing": missing_core})
    wanted = config.blockage_quota if config.blockage_quota is not None else config.blockage_mix
    for kind, amount in wanted.items():
        absent = [t for t in REQUIRED_TABLES[kind] if t not in plan]
        if amount and absent:
            raise ScenarioConfigError(f"Blockage kind {kind.value} needs tables absent from table_plan: {absent}",
                                      {"kind": kind.value, "absent": absent})


def assign_blockages(config: ScenarioConfig, contracts: list[str], rng: random.Random) -> dict[str, BlockageKind]:
    if config.blockage_quota is not None:
        slots: list[Optional[BlockageKind]] = [k for k in BlockageKind for _ in range(config.blockage_quota.get(k, 0))]
        slots += [None] * (len(contracts) - len(slots))
        rng.shuffle(slots)
        return {c: k for c, k in zip(contracts, slots) if k is not None}
    assigned = {}
    for contract in contracts:
        for kind in BlockageKind:
            if rng.random() < config.blockage_mix.get(kind, 0.0):
                assigned[contract] = kind
                break
    return assigned


def _day(offset: int) -> str:
    return (BASE_DATE + timedelta(days=offset)).isoformat()


def _explain(kind: BlockageKind, contract: str) -> str:
    return {
        BlockageKind.MISSING_DELIVERY_REQUEST: f"No delivery request was raised for the sales order of {contract}.",
        BlockageKind.DELIVERY_APPLICATION_NOT_EFFECTIVE:
            f"The delivery request of {contract} is still SUBMITTED; its approval is pending.",
        BlockageKind.OUTBOUND_NOT_EXECUTED: f"The outbound delivery for {contract} was created but never executed.",
        BlockageKind.SITE_RECEIPT_MISSING: f"Goods for {contract} left the warehouse but no site receipt exists.",
        BlockageKind.DIRECT_SHIPMENT_ASN_MISSING:
            f"{contract} ships directly from the supplier, whose ASN never arrived.",
        BlockageKind.ERP_SYNC_GAP: f"The executed outbound delivery of {contract} never produced an ERP material document.",
    }[kind]


def build_rows(config: ScenarioConfig, layout: Layout, rng: random.Random,
               blockages: dict[str, BlockageKind], contracts: list[str]) -> dict[str, list[dict[str, Any]]]:
    cf = layout.erp_contract_field
    rows: dict[str, list[dict[str, Any]]] = {node_id: [] for node_id in
                                              ("table:bpm_contract", "table:bpm_delivery_approval",
                                               "table:bpm_contract_type", "table:erp_customer",
                                               "table:erp_sales_order", "table:erp_delivery_request",
                                               "table:erp_material_document", "table:srm_purchase_order",
                                               "table:srm_vendor_asn", "table:srm_supplier",
                                               "table:wms_outbound_delivery", "table:wms_site_receipt",
                                               "table:wms_inventory")}
    customers = [f"CUST-{i:04d}" for i in range(1, config.customers + 1)]
    suppliers = [f"SUP-{i:03d}" for i in range(1, config.suppliers + 1)]
    materials = sorted({str(rng.randint(1000, 99999)) for _ in range(12)})

    for code, text in CONTRACT_TYPES:
        rows["table:bpm_contract_type"].append({"type_code": code, "description": text})
    for i, code in enumerate(customers, 1):
        rows["table:erp_customer"].append({"customer_code": code, "customer_name": f"Customer {i:02d}",
                                           "region": REGIONS[i % len(REGIONS)]})
    for i, code in enumerate(suppliers, 1):
        rows["table:srm_supplier"].append({"supplier_code": code, "supplier_name": f"Supplier {i:02d}",
                                           "rating": rng.choice(("A", "B", "C"))})
    for material in materials:
        for site in SITES:
            rows["table:wms_inventory"].append({"material_code": material, "site": site,
                                                "on_hand": rng.randint(0, 900)})

    for i, contract in enumerate(contracts, 1):
        kind = blockages.get(contract)
        customer = rng.choice(customers)
        material = rng.choice(materials)
        qty = rng.randint(10, 500)
        direct = kind == BlockageKind.DIRECT_SHIPMENT_ASN_MISSING
        rows["table:bpm_contract"].append({
            "contract_no": contract, "customer_code": customer, "contract_type": rng.choice(CONTRACT_TYPES)[0],
            "signed_on": _day(i), layout.contract_start_field: _day(i + 3),
            "shipment_mode": "DIRECT" if direct else "WAREHOUSE",
            "amount": round(qty * rng.uniform(80.0, 120.0), 2), "status": "ACTIVE",
        })
        so_no = f"SO-{i:06d}"
        sales_order = {"so_no": so_no, cf: contract, "customer_code": customer,
                       "material_code": layout.material(material), "qty": qty, "created_on": _day(i + 4)}
        if layout.opaque_metric:
            sales_order["net_value_agg"] = round(qty * rng.uniform(90.0, 110.0), 2)
        rows["table:erp_sales_order"].append(sales_order)

        po_no = f"PO-{i:06d}"
        rows["table:srm_purchase_order"].append({"po_no": po_no, "contract_no": contract,
                                                 "supplier_code": rng.choice(suppliers), "material_code": material,
                                                 "qty": qty})
        if not direct:
            rows["table:srm_vendor_asn"].append({"asn_no": f"ASN-{i:06d}", "po_no": po_no, "shipped_qty": qty,
                                                 "shipped_on": _day(i + 8)})

        if kind == BlockageKind.MISSING_DELIVERY_REQUEST:
            continue
        request_no = f"DR-{i:06d}"
        effective = kind != BlockageKind.DELIVERY_APPLICATION_NOT_EFFECTIVE
        rows["table:erp_delivery_request"].append({
            "request_no": request_no, "so_no": so_no, cf: contract,
            "status": "EFFECTIVE" if effective else "SUBMITTED",
            "effective_date": _day(i + 6) if effective else None,
        })
        rows["table:bpm_delivery_approval"].append({
            "approval_id": f"AP-{i:06d}", "request_no": request_no, "contract_no": contract,
            "state": "APPROVED" if effective else "PENDING", "decided_on": _day(i + 6) if effective else None,
        })
        if not effective or direct:
            continue

        outbound_no = f"OB-{i:06d}"
        executed = kind != BlockageKind.OUTBOUND_NOT_EXECUTED
        rows["table:wms_outbound_delivery"].append({
            "outbound_no": outbound_no, "request_ref": layout.request_ref(request_no), "qty": qty,
            "status": "EXECUTED" if executed else "CREATED", "executed_on": _day(i + 9) if executed else None,
        })
        if not executed:
            continue
        if kind != BlockageKind.ERP_SYNC_GAP:
            rows["table:erp_material_document"].append({
                "doc_no": f"MD-{i:06d}", "outbound_ref": layout.outbound_ref(outbound_no),
                "material_code": layout.material(material), "qty": qty, "posted_on": _day(i + 9),
            })
        if kind != BlockageKind.SITE_RECEIPT_MISSING:
            received = qty
            if rng.random() < config.receipt_variance:
                received = qty + rng.choice((-1, 1)) * rng.randint(1, 5)
            rows["table:wms_site_receipt"].append({
                "receipt_no": f"RC-{i:06d}", "outbound_no": outbound_no, "received_qty": received,
                "received_on": _day(i + 11), "site": rng.choice(SITES),
            })
    return rows


def write_stores(root: Path, tables: dict[str, TableSpec], rows: dict[str, list[dict[str, Any]]]) -> dict[str, Path]:
    """Writes one SQLite file per system; only planned tables are created."""
    paths = {}
    for system, filename in SYSTEM_STORES.items():
        path = root / filename
        clear_path(path)
        connection = sqlite3.connect(path)
        try:
            for spec in sorted((s for s in tables.values() if s.system == system), key=lambda s: s.node_id):
                columns = ", ".join(f"{quote_ident(c.name)} {c.sql_type}" for c in spec.columns)
                connection.execute(f"CREATE TABLE {quote_ident(spec.physical)} ({columns})")
                names = spec.column_names()
                marks = ", ".join("?" for _ in names)
                connection.executemany(
                    f"INSERT INTO {quote_ident(spec.physical)} VALUES ({marks})",
                    [[row.get(n) for n in names] for row in rows[spec.node_id]],
                )
            connection.commit()
        finally:
            connection.close()
        paths[system] = path
    return paths


# --- Self-verification ---

def defects(view: MergedView, layout: Layout, contract: str) -> set[BlockageKind]:
    """Every blockage kind whose defect is present for the contract, read back from the stores."""
    cf = layout.erp_contract_field
    found: set[BlockageKind] = set()
    header = next((r for r in view.rows("table:bpm_contract") if r["contract_no"] == contract), None)
    orders = [r for r in view.rows("table:erp_sales_order") if r[cf] == contract]
    if header is None or not orders:
        return found
    so_numbers = {r["so_no"] for r in orders}
    requests = [r for r in view.rows("table:erp_delivery_request") if r["so_no"] in so_numbers]
    if "table:erp_delivery_request" in view.tables and not requests:
        found.add(BlockageKind.MISSING_DELIVERY_REQUEST)
    if any(r["status"] != "EFFECTIVE" for r in requests):
        found.add(BlockageKind.DELIVERY_APPLICATION_NOT_EFFECTIVE)

    if header["shipment_mode"] == "DIRECT" and "table:srm_vendor_asn" in view.tables:
        pos = {r["po_no"] for r in view.rows("table:srm_purchase_order") if r["contract_no"] == contract}
        asns = [r for r in view.rows("table:srm_vendor_asn") if r["po_no"] in pos]
        if pos and not asns:
            found.add(BlockageKind.DIRECT_SHIPMENT_ASN_MISSING)

    refs = {layout.request_ref(r["request_no"]) for r in requests}
    outbound = [r for r in view.rows("table:wms_outbound_delivery") if r["request_ref"] in refs]
    if any(r["status"] == "CREATED" for r in outbound):
        found.add(BlockageKind.OUTBOUND_NOT_EXECUTED)
    for ob in (r for r in outbound if r["status"] == "EXECUTED"):
        documents = [r for r in view.rows("table:erp_material_document")
                     if r["outbound_ref"] == layout.outbound_ref(ob["outbound_no"])]
        receipts = [r for r in view.rows("table:wms_site_receipt") if r["outbound_no"] == ob["outbound_no"]]
        if "table:erp_material_document" in view.tables and not documents:
            found.add(BlockageKind.ERP_SYNC_GAP)
        if "table:wms_site_receipt" in view.tables and documents and not receipts:
            found.add(BlockageKind.SITE_RECEIPT_MISSING)
    return found


def verify_injection(scenario: "Scenario") -> None:
    """Each labeled contract shows exactly its own defect; every other contract shows none."""
    labels = {l.contract_id: l.kind for l in scenario.labels}
    with merged_view(scenario.sources, scenario.tables) as view:
        for contract in scenario.contracts:
            present = defects(view, scenario.layout, contract)
            expected = {labels[contract]} if contract in labels else set()
            if present != expected:
                raise ScenarioConfigError(
                    f"Injected defects for {contract} do not verify: expected {sorted(k.value for k in expected)}, "
                    f"found {sorted(k.value for k in present)}",
                    {"contract": contract},
                )
    logger.info(f"Scenario Generation: verified {len(scenario.labels)} blockages over {len(scenario.contracts)} contracts")


def write_engine_config(scenario: "Scenario") -> None:
    write_document(scenario.engine_config, {
        "config_version": 1,
        "ontology_root": "ontology",
        "sources": {system: path.name for system, path in scenario.sources.items()},
        "artifact_dir": "artifacts",
        "trace_dir": "traces",
        "report_dir": "reports",
        "scenario_dir": ".",
        "sandbox": {"jail_root": "sandbox"},
    })


def generate_scenario(config: ScenarioConfig, out_dir: Path,
                      bucket_counts: Optional[dict[str, int]] = None) -> Scenario:
    """
    Writes <out_dir>/<seed>/ with one store per system, the ontology fixture,
    ground-truth labels, the question set and an engine config pointing at all of it.
    """
    check_config(config)
    rng = random.Random(config.seed)
    layout = draw_layout(config, rng)
    tables = table_specs(layout, config.table_plan)
    contracts = [f"HT-{i:04d}" for i in range(1, config.contracts + 1)]
    blockages = assign_blockages(config, contracts, rng)
    rows = build_rows(config, layout, rng, blockages, contracts)

    root = Path(out_dir) / str(config.seed)
    root.mkdir(parents=True, exist_ok=True)
    sources = write_stores(root, tables, rows)
    labels = [
        BlockageLabel(contract_id=c, kind=k, blocking_stage=BLOCKING_STAGE[k], explanation=_explain(k, c))
        for c, k in sorted(blockages.items())
    ]
    scenario = Scenario(config=config, root=root, layout=layout, tables=tables, sources=sources,
                        labels=labels, contracts=contracts)
    verify_injection(scenario)

    emit_ontology(scenario)
    write_document(root / LABELS_FILE, {
        "seed": config.seed,
        "anomalies": sorted(a.value for a in layout.anomalies),
        "labels": [l.model_dump(mode="json") for l in labels],
    })
    save_questions(root / QUESTIONS_FILE, generate_questions(scenario, bucket_counts=bucket_counts))
    write_engine_config(scenario)
    logger.info(f"Scenario Generation: seed {config.seed}, {len(contracts)} contracts, {len(labels)} blocked, "
                f"anomalies {sorted(a.value for a in layout.anomalies)} -> {root}")
    return scenario
