# src/models/scenario.py - Pydantic models for synthetic scenarios, eval questions, verdicts and reports

from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .engine import EngineMode

Suite = Literal["brca", "general"]
NodeBucket = Literal["k0", "k1", "k2", "k3", "k>3"]
NODE_BUCKETS: tuple[str, ...] = ("k0", "k1", "k2", "k3", "k>3")

BRCA_TEMPLATE = "Why has contract {contract} not completed fulfillment?"


class AnomalyKind(str, Enum):
    SCHEMA_AMBIGUITY = "schema-ambiguity"
    FIELD_EQUIVOCATION = "field-equivocation"
    OPAQUE_METRIC = "opaque-metric"
    IDENTIFIER_INCONSISTENCY = "identifier-inconsistency"
    FORMAT_DISCREPANCY = "format-discrepancy"


class BlockageKind(str, Enum):
    MISSING_DELIVERY_REQUEST = "missing-delivery-request"
    DELIVERY_APPLICATION_NOT_EFFECTIVE = "delivery-application-not-effective"
    OUTBOUND_NOT_EXECUTED = "outbound-not-executed"
    SITE_RECEIPT_MISSING = "site-receipt-missing"
    DIRECT_SHIPMENT_ASN_MISSING = "direct-shipment-asn-missing"
    ERP_SYNC_GAP = "erp-sync-gap"


# node each blockage stalls at
BLOCKING_STAGE: dict[BlockageKind, str] = {
    BlockageKind.MISSING_DELIVERY_REQUEST: "table:erp_delivery_request",
    BlockageKind.DELIVERY_APPLICATION_NOT_EFFECTIVE: "table:erp_delivery_request",
    BlockageKind.OUTBOUND_NOT_EXECUTED: "table:wms_outbound_delivery",
    BlockageKind.SITE_RECEIPT_MISSING: "table:wms_site_receipt",
    BlockageKind.DIRECT_SHIPMENT_ASN_MISSING: "table:srm_vendor_asn",
    BlockageKind.ERP_SYNC_GAP: "table:erp_material_document",
}

DEFAULT_TABLE_PLAN: tuple[str, ...] = (
    "table:bpm_contract", "table:bpm_delivery_approval", "table:bpm_contract_type",
    "table:erp_customer", "table:erp_sales_order", "table:erp_delivery_request", "table:erp_material_document",
    "table:srm_purchase_order", "table:srm_vendor_asn", "table:srm_supplier",
    "table:wms_outbound_delivery", "table:wms_site_receipt", "table:wms_inventory",
)


class ScenarioConfig(BaseModel):
    seed: int = 7
    contracts: int = Field(36, ge=1)
    customers: int = Field(10, ge=1)
    suppliers: int = Field(6, ge=1)
    table_plan: list[str] = Field(default_factory=lambda: list(DEFAULT_TABLE_PLAN))
    anomaly_mix: dict[AnomalyKind, float] = Field(default_factory=lambda: {k: 1.0 for k in AnomalyKind})
    blockage_mix: dict[BlockageKind, float] = Field(default_factory=lambda: {k: 0.15 for k in BlockageKind})
    # exact number of contracts per blockage kind; when set, blockage_mix is ignored
    blockage_quota: Optional[dict[BlockageKind, int]] = Field(default_factory=lambda: {k: 4 for k in BlockageKind})
    receipt_variance: float = Field(0.2, ge=0.0, le=1.0, description="Share of receipts with a quantity mismatch.")

    @field_validator("anomaly_mix", "blockage_mix")
    @classmethod
    def _probabilities(cls, value: dict) -> dict:
        for kind, p in value.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {kind.value} must be in [0, 1], got {p}")
        return value

    @model_validator(mode="after")
    def _quota_fits(self) -> "ScenarioConfig":
        if self.blockage_quota is not None:
            if any(n < 0 for n in self.blockage_quota.values()):
                raise ValueError("blockage quotas must be non-negative")
            if sum(self.blockage_quota.values()) > self.contracts:
                raise ValueError(f"blockage quotas need {sum(self.blockage_quota.values())} contracts, "
                                 f"only {self.contracts} configured")
        return self

    def anomaly(self, kind: AnomalyKind) -> float:
        return self.anomaly_mix.get(kind, 0.0)


class BlockageLabel(BaseModel):
    contract_id: str
    kind: BlockageKind
    blocking_stage: str
    explanation: str


class PredicatePart(BaseModel):
    """Satisfied when every expected token occurs in the answer (case-insensitive, order-free)."""

    name: str
    expected: list[str]
    core: bool = True


class EvalQuestion(BaseModel):
    question_id: str
    text: str
    suite: Suite
    node_bucket: Optional[NodeBucket] = None
    label: Optional[BlockageLabel] = None
    predicate: list[PredicatePart] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ground_truth(self) -> "EvalQuestion":
        if self.suite == "brca" and self.label is None:
            raise ValueError("brca questions carry a blockage label")
        if self.suite == "general" and (self.node_bucket is None or not self.predicate):
            raise ValueError("general questions carry a node bucket and a predicate")
        return self


class Verdict(BaseModel):
    question_id: str
    label: Literal["correct", "partially-correct", "incorrect"]
    matched: list[str] = Field(default_factory=list)
    unmatched: list[str] = Field(default_factory=list)


class QuestionRecord(BaseModel):
    question_id: str
    suite: Suite
    node_bucket: Optional[NodeBucket] = None
    verdict: Verdict
    termination: str
    tool_turns: int
    approx_tokens: int
    session_id: str
    failure: Optional[dict] = None


class Aggregate(BaseModel):
    questions: int = 0
    accuracy: float = 0.0
    correct: int = 0
    partially_correct: int = 0
    incorrect: int = 0
    mean_tool_turns: float = 0.0
    stderr_tool_turns: float = 0.0
    mean_tokens: float = 0.0
    stderr_tokens: float = 0.0


class EvalReport(BaseModel):
    suite: Suite
    mode: EngineMode
    seed: int
    records: list[QuestionRecord] = Field(default_factory=list)
    overall: Aggregate = Field(default_factory=Aggregate)
    buckets: dict[str, Aggregate] = Field(default_factory=dict)
