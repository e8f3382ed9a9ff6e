# src/models/ontology.py - Pydantic models for the stratified hypergraph ontology

import re
from enum import Enum
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

# Named parameters in query templates, e.g. ":contract_no"
PLACEHOLDER_PATTERN = re.compile(r"(?<![:\w]):([A-Za-z_][A-Za-z0-9_]*)")
TRANSFORM_PATTERN = re.compile(r"^(identity|case-fold|zero-pad\((\d+)\)|strip-prefix\((.+)\))$")
SCOPE_PATTERN = re.compile(r"^(global|tenant:[A-Za-z0-9_.\-]+)$")


class ValueKind(str, Enum):
    IDENTIFIER = "identifier"
    QUANTITY = "quantity"
    TIMESTAMP = "timestamp"
    STATUS_CODE = "status-code"
    FREE_TEXT = "free-text"


class HyperedgeKind(str, Enum):
    DECLARATIVE = "declarative"
    PROCEDURAL = "procedural"


class Lifecycle(str, Enum):
    DRAFT = "draft"
    PENDING_REVIEW = "pending_review"
    APPROVED = "approved"
    RETIRED = "retired"


class FieldSpec(BaseModel):
    """One annotated column of an entity proxy."""
    model_config = ConfigDict(extra="allow", frozen=True)

    name: str = Field(..., min_length=1, description="Column identifier in the physical table.")
    semantic_annotation: str = Field("", description="Natural-language business meaning.")
    value_kind: ValueKind = ValueKind.FREE_TEXT
    visibility_tier: int = Field(0, ge=0, description="Minimum principal tier allowed to see the field.")


class GraphNode(BaseModel):
    """A virtualized entity proxy for one table of one business system."""
    model_config = ConfigDict(extra="allow", frozen=True, populate_by_name=True)

    id: str = Field(..., description="Globally unique id, conventionally 'table:<system>_<name>'.")
    name: str
    description: str = ""
    source: str = Field(..., description="System-of-origin tag, e.g. ERP.")
    table: str = Field(..., min_length=1, description="Physical table name inside the source store.")
    schema_: list[FieldSpec] = Field(default_factory=list, alias="schema")
    query_template: str = ""

    def field(self, name: str) -> Optional[FieldSpec]:
        for spec in self.schema_:
            if spec.name == name:
                return spec
        return None

    def field_names(self) -> list[str]:
        return [spec.name for spec in self.schema_]

    def placeholders(self) -> list[str]:
        seen: list[str] = []
        for name in PLACEHOLDER_PATTERN.findall(self.query_template):
            if name not in seen:
                seen.append(name)
        return seen


class JoinTriple(BaseModel):
    model_config = ConfigDict(extra="allow", frozen=True)

    src_field: str
    dst_field: str
    transform: str = "identity"

    @field_validator("transform")
    @classmethod
    def _check_transform(cls, value: str) -> str:
        if not TRANSFORM_PATTERN.match(value):
            raise ValueError(f"unknown transform '{value}'")
        return value


class BinaryEdge(BaseModel):
    """A cross-system foreign-key relationship between two graph nodes."""
    model_config = ConfigDict(extra="allow", frozen=True)

    id: str = Field(..., min_length=1)
    src: str
    dst: str
    join_spec: list[JoinTriple] = Field(..., min_length=1)
    label: str = ""
    self_referential: bool = False


class Hyperedge(BaseModel):
    """An n-ary semantic unit binding graph nodes to natural-language soft axioms."""
    model_config = ConfigDict(extra="allow", frozen=True)

    id: str = Field(..., min_length=1)
    title: str = Field(..., min_length=1)
    aliases: list[str] = Field(default_factory=list)
    description: str = ""
    kind: HyperedgeKind = HyperedgeKind.DECLARATIVE
    scope: str = "global"
    member_nodes: list[str] = Field(default_factory=list)
    semantic_details: str = ""
    related_hyperedges: list[str] = Field(default_factory=list)
    attachments: list[str] = Field(default_factory=list)
    lifecycle: Lifecycle = Lifecycle.DRAFT

    @field_validator("scope")
    @classmethod
    def _check_scope(cls, value: str) -> str:
        if not SCOPE_PATTERN.match(value):
            raise ValueError(f"scope must be 'global' or 'tenant:<id>', got '{value}'")
        return value

    @field_validator("member_nodes")
    @classmethod
    def _normalize_members(cls, value: list[str]) -> list[str]:
        return sorted(set(value))

    @property
    def is_global(self) -> bool:
        return self.scope == "global"

    @property
    def tenant(self) -> Optional[str]:
        return None if self.is_global else self.scope.split(":", 1)[1]

    @property
    def active(self) -> bool:
        return self.lifecycle != Lifecycle.RETIRED

    def surface_forms(self) -> list[str]:
        return [self.title, *self.aliases]

    def summary(self) -> "HyperedgeSummary":
        return HyperedgeSummary(
            id=self.id, title=self.title, description=self.description, kind=self.kind, scope=self.scope
        )


class HyperedgeSummary(BaseModel):
    """Lightweight projection injected into context; never carries semantic_details."""
    model_config = ConfigDict(frozen=True)

    id: str
    title: str
    description: str
    kind: HyperedgeKind
    scope: str

    def summary_text(self) -> str:
        return f"{self.title}\n{self.description}"


class UnifiedGraph(BaseModel):
    """The five-element incidence structure (V, E, V_H, E_VH, E_H)."""
    model_config = ConfigDict(frozen=True)

    base_nodes: frozenset[str] = frozenset()
    binary_edges: frozenset[tuple[str, str, str]] = frozenset()
    hyperedge_nodes: frozenset[str] = frozenset()
    incidence_edges: frozenset[tuple[str, str]] = frozenset()
    inter_hyperedge_edges: frozenset[tuple[str, str]] = frozenset()


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    severity: Literal["error", "warning"]
    entity_id: str
    message: str
    rule: str = ""


class ValidationReport(BaseModel):
    violations: list[Violation] = Field(default_factory=list)

    @computed_field
    @property
    def ok(self) -> bool:
        return not any(v.severity == "error" for v in self.violations)

    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]


class Change(BaseModel):
    """One atomic ontology write: add, update or retire a node, edge or hyperedge."""

    op: Literal["add", "update", "retire"]
    entity: Literal["node", "edge", "hyperedge"]
    payload: Optional[dict[str, Any]] = None
    entity_id: Optional[str] = None

    def target_id(self) -> str:
        if self.entity_id:
            return self.entity_id
        if self.payload and "id" in self.payload:
            return str(self.payload["id"])
        raise ValueError("change names no entity id")
