# src/models/access.py - Pydantic models for data sources, principals and query results

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .ontology import ValueKind


class DataSource(BaseModel):
    """A read-only relational snapshot store for one business system."""

    source_id: str = Field(..., min_length=1, description="Tag matching GraphNode.source.")
    kind: str = "embedded-relational-snapshot"
    location: str = Field(..., description="Path of the snapshot file.")
    dialect: str = "sqlite-select"


class Principal(BaseModel):
    model_config = ConfigDict(frozen=True)

    principal_id: str
    roles: frozenset[str] = frozenset()
    tenant: Optional[str] = Field(None, description="Tenant id; None means global.")
    max_visibility_tier: int = Field(0, ge=0)
    sources: Optional[frozenset[str]] = Field(None, description="Sources the principal may read; None means all.")

    def has_role(self, role: str) -> bool:
        return role in self.roles

    def can_read(self, source_id: str) -> bool:
        return self.sources is None or source_id in self.sources


class ColumnSpec(BaseModel):
    name: str
    value_kind: ValueKind = ValueKind.FREE_TEXT


class Provenance(BaseModel):
    source_id: str
    node_id: str
    query: str
    parameters: dict[str, Any] = Field(default_factory=dict)
    timestamp: str
    result_digest: str


class QueryResult(BaseModel):
    """One executed query. Rows are inline or persisted as an artifact, never both."""

    columns: list[ColumnSpec]
    rows: Optional[list[list[Any]]] = None
    artifact_ref: Optional[str] = None
    row_count: int = Field(..., ge=0)
    provenance: Provenance
    redactions: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _one_representation(self) -> "QueryResult":
        if (self.rows is None) == (self.artifact_ref is None):
            raise ValueError("exactly one of rows / artifact_ref must be populated")
        if self.rows is not None and len(self.rows) != self.row_count:
            raise ValueError("row_count must equal the number of inline rows")
        return self

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


class EvidenceArtifact(BaseModel):
    artifact_id: str
    path: str
    digest: str
    producer: str
    row_count: int = 0
    provenance: list[Provenance] = Field(default_factory=list)


class Constraint(BaseModel):
    node_id: str
    field: str
    value: Any


class HopResult(BaseModel):
    node_id: str
    via_edge: Optional[str] = Field(None, description="Binary edge used to reach this hop; None for the anchor.")
    parent: Optional[str] = None
    keys_propagated: int = 0
    result: QueryResult


class FederatedResult(BaseModel):
    """Per-hop results plus the joined row set along the traversal tree."""

    order: list[str]
    hops: list[HopResult]
    joined: QueryResult
