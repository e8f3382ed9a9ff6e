# tests/conftest.py - Shared fixtures: a small hand-built ontology over sqlite snapshots, and a generated scenario

import sqlite3
from pathlib import Path

import pytest

from src.core.config import load_config
from src.core.ontology import OntologyStore
from src.core.substrate import Substrate
from src.models.access import DataSource, Principal
from src.models.ontology import BinaryEdge, FieldSpec, GraphNode, Hyperedge, HyperedgeKind, JoinTriple, Lifecycle
from src.models.scenario import ScenarioConfig
from src.scenario.generator import generate_scenario

# --- Mini landscape ---
# customer (ERP) -- sales_order (ERP) -- purchase_order (SRM) -- receipt (WMS)
# sales_order.so_no -> purchase_order.so_ref is case-folded, purchase_order.po_no -> receipt.po_ref is zero-padded.

CUSTOMERS = [
    ("C001", "Acme Tools", 50000),
    ("C002", "Borealis Foods", 12000),
    ("C003", "Cobalt Mining", 90000),
]
SALES_ORDERS = [
    ("SO-0001", "C001", 10, "OPEN"),
    ("SO-0002", "C001", 4, "SHIPPED"),
    ("SO-0003", "C002", 7, "OPEN"),
    ("SO-0004", "C003", 12, "OPEN"),
    ("SO-0005", None, 1, "DRAFT"),
]
PURCHASE_ORDERS = [
    ("171", "so-0001", "SUP-A"),
    ("172", "so-0001", "SUP-B"),
    ("173", "so-0003", "SUP-A"),
    ("174", "so-0004", "SUP-C"),
    ("175", "so-9999", "SUP-C"),
]
RECEIPTS = [
    ("R-1", "00171", 10),
    ("R-2", "00171", 2),
    ("R-3", "00173", 7),
    ("R-4", "00999", 3),
]

TABLES = {
    "ERP": {
        "erp_customer": (["customer_code", "customer_name", "credit_limit"], CUSTOMERS),
        "erp_sales_order": (["so_no", "customer_code", "qty", "status"], SALES_ORDERS),
    },
    "SRM": {"srm_po": (["po_no", "so_ref", "supplier_code"], PURCHASE_ORDERS)},
    "WMS": {"wms_receipt": (["receipt_no", "po_ref", "received_qty"], RECEIPTS)},
}

CUSTOMER = "table:erp_customer"
SALES_ORDER = "table:erp_sales_order"
PURCHASE_ORDER = "table:srm_purchase_order"
RECEIPT = "table:wms_receipt"
CHAIN = [CUSTOMER, SALES_ORDER, PURCHASE_ORDER, RECEIPT]


def _field(name: str, kind: str = "identifier", tier: int = 0, note: str = "") -> FieldSpec:
    return FieldSpec(name=name, semantic_annotation=note, value_kind=kind, visibility_tier=tier)


def mini_nodes() -> list[GraphNode]:
    return [
        GraphNode(id=CUSTOMER, name="Customer", source="ERP", table="erp_customer",
                  description="Customer master data.",
                  schema=[_field("customer_code", note="customer key"), _field("customer_name", "free-text"),
                          _field("credit_limit", "quantity", tier=1, note="credit line")]),
        GraphNode(id=SALES_ORDER, name="Sales Order", source="ERP", table="erp_sales_order",
                  description="Sales order lines.",
                  query_template="SELECT * FROM erp_sales_order WHERE status = :status",
                  schema=[_field("so_no"), _field("customer_code"), _field("qty", "quantity"),
                          _field("status", "status-code")]),
        GraphNode(id=PURCHASE_ORDER, name="Purchase Order", source="SRM", table="srm_po",
                  schema=[_field("po_no"), _field("so_ref"), _field("supplier_code")]),
        GraphNode(id=RECEIPT, name="Site Receipt", source="WMS", table="wms_receipt",
                  schema=[_field("receipt_no"), _field("po_ref"), _field("received_qty", "quantity")]),
    ]


def mini_edges() -> list[BinaryEdge]:
    return [
        BinaryEdge(id="edge:customer_orders", src=CUSTOMER, dst=SALES_ORDER,
                   join_spec=[JoinTriple(src_field="customer_code", dst_field="customer_code")]),
        BinaryEdge(id="edge:order_procurement", src=SALES_ORDER, dst=PURCHASE_ORDER,
                   join_spec=[JoinTriple(src_field="so_no", dst_field="so_ref", transform="case-fold")]),
        BinaryEdge(id="edge:po_receipts", src=PURCHASE_ORDER, dst=RECEIPT,
                   join_spec=[JoinTriple(src_field="po_no", dst_field="po_ref", transform="zero-pad(5)")]),
    ]


def mini_hyperedges() -> list[Hyperedge]:
    return [
        Hyperedge(id="hyperedge:order_book", title="Customer Order Book", aliases=["order book"],
                  description="Customers and their sales orders.", kind=HyperedgeKind.DECLARATIVE,
                  member_nodes=[CUSTOMER, SALES_ORDER], semantic_details="Orders belong to one customer.",
                  related_hyperedges=["hyperedge:procurement_trace"], lifecycle=Lifecycle.APPROVED),
        Hyperedge(id="hyperedge:procurement_trace", title="Procurement Trace",
                  description="How a sales order is sourced and received.", kind=HyperedgeKind.PROCEDURAL,
                  member_nodes=[SALES_ORDER, PURCHASE_ORDER, RECEIPT],
                  semantic_details="1. Find purchase orders by case-folded so_ref.\n2. Match receipts on padded po_ref.",
                  lifecycle=Lifecycle.APPROVED),
        Hyperedge(id="hyperedge:tenant_backlog", title="Regional Backlog", scope="tenant:north",
                  description="Open orders of the northern region.", kind=HyperedgeKind.DECLARATIVE,
                  member_nodes=[SALES_ORDER], lifecycle=Lifecycle.APPROVED),
        Hyperedge(id="hyperedge:draft_idea", title="Supplier Scorecard", kind=HyperedgeKind.DECLARATIVE,
                  member_nodes=[PURCHASE_ORDER], lifecycle=Lifecycle.DRAFT),
    ]


def write_stores(root: Path) -> dict[str, Path]:
    paths = {}
    root.mkdir(parents=True, exist_ok=True)
    for source_id, tables in TABLES.items():
        path = root / f"{source_id.lower()}.sqlite"
        conn = sqlite3.connect(path)
        for table, (columns, rows) in tables.items():
            conn.execute(f"CREATE TABLE {table} ({', '.join(columns)})")
            conn.executemany(f"INSERT INTO {table} VALUES ({', '.join('?' for _ in columns)})", rows)
        conn.commit()
        conn.close()
        paths[source_id] = path
    return paths


# --- Fixtures ---

@pytest.fixture
def mini_store() -> OntologyStore:
    return OntologyStore.from_entities(mini_nodes(), mini_edges(), mini_hyperedges())


@pytest.fixture
def mini_sources(tmp_path) -> dict[str, Path]:
    return write_stores(tmp_path / "stores")


@pytest.fixture
def substrate(mini_store, mini_sources, tmp_path):
    sub = Substrate(mini_store, tmp_path / "artifacts")
    for source_id, path in mini_sources.items():
        sub.register_source(DataSource(source_id=source_id, location=str(path)))
    yield sub
    sub.close()


@pytest.fixture
def analyst() -> Principal:
    return Principal(principal_id="ana", roles=frozenset({"analyst"}), max_visibility_tier=0)


@pytest.fixture
def auditor() -> Principal:
    return Principal(principal_id="aud", roles=frozenset({"analyst"}), max_visibility_tier=5)


@pytest.fixture(scope="session")
def scenario(tmp_path_factory):
    """The default generated enterprise scenario. Generation is deterministic, so one copy serves every test."""
    return generate_scenario(ScenarioConfig(seed=7), tmp_path_factory.mktemp("scenario"))


@pytest.fixture
def scenario_config(scenario, tmp_path):
    overrides = {"trace_dir": tmp_path / "traces", "artifact_dir": tmp_path / "artifacts",
                 "report_dir": tmp_path / "reports"}
    return load_config(scenario.engine_config, overrides=overrides)
