# src/scenario/questions.py - Evaluation questions with ground truth computed from the merged reference store

import logging
import random
from collections import Counter
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Optional

from ..core.documents import read_document, write_document
from ..core.errors import QuestionCountError
from ..models.scenario import BRCA_TEMPLATE, NODE_BUCKETS, EvalQuestion, PredicatePart
from .reference import MergedView, merged_view

if TYPE_CHECKING:
    from .generator import Scenario

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_BUCKET_COUNTS: dict[str, int] = {bucket: 8 for bucket in NODE_BUCKETS}
TOP_CUSTOMER_SIZES = (3, 5)
STATUS_TEMPLATES = (
    # phrase, node, field, statuses
    ("delivery requests", "table:erp_delivery_request", "status", ("SUBMITTED", "EFFECTIVE")),
    ("outbound deliveries", "table:wms_outbound_delivery", "status", ("CREATED", "EXECUTED")),
    ("delivery approvals", "table:bpm_delivery_approval", "state", ("PENDING", "APPROVED")),
)

Drafted = tuple[str, list[PredicatePart]]


def ranked_counts(values: list[str], n: int) -> list[tuple[str, int]]:
    """Most frequent first, ties broken by value."""
    return sorted(Counter(values).items(), key=lambda kv: (-kv[1], kv[0]))[:n]


# --- General-suite templates, one builder per node bucket ---

def _metadata_questions(scenario: "Scenario", view: MergedView, rng: random.Random) -> list[Drafted]:
    drafted = []
    for node_id, spec in sorted(scenario.tables.items()):
        drafted.append((f"Which business system stores the data of {node_id}?",
                        [PredicatePart(name="system", expected=[spec.system])]))
    rng.shuffle(drafted)
    return drafted


def _single_table_questions(scenario: "Scenario", view: MergedView, rng: random.Random) -> list[Drafted]:
    drafted = []
    if "table:bpm_contract" in scenario.tables:
        customers = [r["customer_code"] for r in view.rows("table:bpm_contract")]
        for n in TOP_CUSTOMER_SIZES:
            ranked = ranked_counts(customers, n)
            if not ranked:
                continue
            drafted.append((f"Which are the top {n} customers by contract volume?", [
                PredicatePart(name="customers", expected=[code for code, _ in ranked]),
                PredicatePart(name="leading-count", expected=[f"({ranked[0][1]})"], core=False),
            ]))
    for phrase, node_id, field, statuses in STATUS_TEMPLATES:
        if node_id not in scenario.tables:
            continue
        for status in statuses:
            count = sum(1 for r in view.rows(node_id) if r[field] == status)
            drafted.append((f"How many {phrase} are in status {status}?",
                            [PredicatePart(name="count", expected=[str(count)])]))
    return drafted


def _two_table_questions(scenario: "Scenario", view: MergedView, rng: random.Random) -> list[Drafted]:
    drafted = []
    if {"table:srm_purchase_order", "table:srm_supplier"} <= set(scenario.tables):
        suppliers = {r["supplier_code"]: r for r in view.rows("table:srm_supplier")}
        for order in view.rows("table:srm_purchase_order"):
            supplier = suppliers.get(order["supplier_code"])
            if supplier is None:
                continue
            drafted.append((f"Which supplier fulfills purchase order {order['po_no']}?", [
                PredicatePart(name="supplier", expected=[supplier["supplier_code"]]),
                PredicatePart(name="supplier-name", expected=[supplier["supplier_name"]], core=False),
            ]))
    if {"table:erp_sales_order", "table:erp_customer"} <= set(scenario.tables):
        customers = {r["customer_code"]: r for r in view.rows("table:erp_customer")}
        for order in view.rows("table:erp_sales_order"):
            customer = customers.get(order["customer_code"])
            if customer is None:
                continue
            drafted.append((f"Which customer placed sales order {order['so_no']}?", [
                PredicatePart(name="customer", expected=[customer["customer_code"]]),
                PredicatePart(name="customer-name", expected=[customer["customer_name"]], core=False),
            ]))
    rng.shuffle(drafted)
    return drafted


def _receipt_questions(scenario: "Scenario", view: MergedView, rng: random.Random) -> list[Drafted]:
    needed = {"table:erp_delivery_request", "table:wms_outbound_delivery", "table:wms_site_receipt"}
    if not needed <= set(scenario.tables):
        return []
    layout = scenario.layout
    refs = {layout.request_ref(r["request_no"]) for r in view.rows("table:erp_delivery_request")}
    outbound = {r["outbound_no"]: r for r in view.rows("table:wms_outbound_delivery") if r["request_ref"] in refs}
    drafted = []
    sites = sorted({r["site"] for r in view.rows("table:wms_site_receipt")})
    for site in sites:
        over = under = 0
        for receipt in view.rows("table:wms_site_receipt"):
            shipped = outbound.get(receipt["outbound_no"])
            if receipt["site"] != site or shipped is None:
                continue
            over += receipt["received_qty"] > shipped["qty"]
            under += receipt["received_qty"] < shipped["qty"]
        drafted.append((f"How many site receipts at {site} were over-received?",
                        [PredicatePart(name="count", expected=[str(over)])]))
        drafted.append((f"How many site receipts at {site} were under-received?",
                        [PredicatePart(name="count", expected=[str(under)])]))
    return drafted


def _blocked_line_questions(scenario: "Scenario", view: MergedView, rng: random.Random) -> list[Drafted]:
    needed = {"table:erp_customer", "table:erp_sales_order", "table:erp_delivery_request",
              "table:bpm_delivery_approval"}
    if not needed <= set(scenario.tables):
        return []
    approved = {r["request_no"] for r in view.rows("table:bpm_delivery_approval")}
    pending = {r["so_no"] for r in view.rows("table:erp_delivery_request")
               if r["status"] == "SUBMITTED" and r["request_no"] in approved}
    blocked: dict[str, list[int]] = {}
    for order in view.rows("table:erp_sales_order"):
        if order["so_no"] in pending:
            blocked.setdefault(order["customer_code"], []).append(int(order["qty"]))
    codes = [r["customer_code"] for r in view.rows("table:erp_customer")]
    # customers with blocked lines first, the rest after
    ordered = sorted(codes, key=lambda c: (c not in blocked, c))
    drafted = []
    for code in ordered:
        lines = blocked.get(code, [])
        drafted.append((
            f"What is the total quantity of sales order lines blocked by a pending delivery approval for customer {code}?",
            [PredicatePart(name="quantity", expected=[str(sum(lines))]),
             PredicatePart(name="lines", expected=[f"lines: {len(lines)}"], core=False)],
        ))
    return drafted


BUCKET_BUILDERS: dict[str, Callable[["Scenario", MergedView, random.Random], list[Drafted]]] = {
    "k0": _metadata_questions,
    "k1": _single_table_questions,
    "k2": _two_table_questions,
    "k3": _receipt_questions,
    "k>3": _blocked_line_questions,
}


def _bucket_tag(bucket: str) -> str:
    return bucket.replace(">", "gt")


def generate_questions(scenario: "Scenario", brca_count: Optional[int] = None,
                       bucket_counts: Optional[dict[str, int]] = None) -> list[EvalQuestion]:
    """
    brca questions instantiate the template over blocked contracts; general questions are
    drawn per node bucket. Explicit counts larger than what the scenario offers raise
    QuestionCountError; the defaults take what is available.
    """
    labels = list(scenario.labels)
    if brca_count is not None and brca_count > len(labels):
        raise QuestionCountError(f"Requested {brca_count} brca questions but only {len(labels)} contracts are blocked",
                                 {"requested": brca_count, "available": len(labels)})
    questions = [
        EvalQuestion(question_id=f"brca-{i:03d}", text=BRCA_TEMPLATE.format(contract=label.contract_id),
                     suite="brca", label=label)
        for i, label in enumerate(labels[:brca_count] if brca_count is not None else labels, 1)
    ]

    strict = bucket_counts is not None
    counts = bucket_counts if strict else DEFAULT_BUCKET_COUNTS
    rng = random.Random(scenario.config.seed)
    with merged_view(scenario.sources, scenario.tables) as view:
        for bucket in NODE_BUCKETS:
            wanted = counts.get(bucket, 0)
            if not wanted:
                continue
            drafted = BUCKET_BUILDERS[bucket](scenario, view, rng)
            if strict and wanted > len(drafted):
                raise QuestionCountError(
                    f"Requested {wanted} questions for bucket {bucket} but the scenario offers {len(drafted)}",
                    {"bucket": bucket, "requested": wanted, "available": len(drafted)},
                )
            for i, (text, predicate) in enumerate(drafted[:wanted], 1):
                questions.append(EvalQuestion(question_id=f"general-{_bucket_tag(bucket)}-{i:03d}", text=text,
                                              suite="general", node_bucket=bucket, predicate=predicate))
    logger.info(f"Question Generation: {sum(q.suite == 'brca' for q in questions)} brca, "
                f"{sum(q.suite == 'general' for q in questions)} general")
    return questions


def save_questions(path: Path, questions: list[EvalQuestion]) -> None:
    write_document(path, {"questions": [q.model_dump(mode="json") for q in questions]})


def load_questions(path: Path) -> list[EvalQuestion]:
    return [EvalQuestion.model_validate(q) for q in read_document(path).get("questions", [])]
