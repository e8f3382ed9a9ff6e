# src/models/engine.py - Pydantic models for reasoning sessions and their audit trail

from enum import Enum
from typing import Any, Literal, Optional, get_args

from pydantic import BaseModel, Field

from .access import Principal, Provenance

ToolName = Literal[
    "hyperedge_search", "hyperedge_read_details", "data_direct_query", "data_topology_query",
    "explore_adjacency", "explore_paths", "explore_related", "sandbox_run", "sandbox_attachment",
]
TOOL_NAMES: tuple[str, ...] = get_args(ToolName)

EngineMode = Literal["complete", "declarative-only", "table-list"]


class Termination(str, Enum):
    BUDGET_EXHAUSTED = "budget-exhausted"
    ANSWERED = "answered"
    FAILED = "failed"


class StepOutcome(str, Enum):
    CONTINUE = "continue"
    ANSWERED = "answered"
    FAILED = "failed"


class Query(BaseModel):
    text: str = Field(..., min_length=1)
    principal: Principal
    session_id: Optional[str] = None
    budget: Optional[int] = Field(None, ge=0)
    mode: Optional[EngineMode] = None


class ToolCall(BaseModel):
    call_id: str
    tool_name: str
    arguments: dict[str, Any] = Field(default_factory=dict)


class BackendReply(BaseModel):
    """Either tool calls or final text, plus optional reported token usage."""

    text: Optional[str] = None
    tool_calls: list[ToolCall] = Field(default_factory=list)
    usage_tokens: Optional[int] = None

    @property
    def is_tool_turn(self) -> bool:
        return bool(self.tool_calls)


class EvidenceEntry(BaseModel):
    """One tool observation admitted to the evidence ledger."""

    evidence_id: str
    call_id: str
    tool_name: str
    node_ids: list[str] = Field(default_factory=list)
    artifact_refs: list[str] = Field(default_factory=list)
    provenance: list[Provenance] = Field(default_factory=list)
    row_count: Optional[int] = None


class ToolResultRecord(BaseModel):
    call_id: str
    tool_name: str
    ok: bool
    evidence_id: Optional[str] = None
    artifact_refs: list[str] = Field(default_factory=list)
    content: str = ""
    error: Optional[dict[str, Any]] = None


class TraceStep(BaseModel):
    index: int
    message_digest: str
    kind: Literal["tool", "answer", "rejected-answer", "backend-failure"]
    tool_calls: list[ToolCall] = Field(default_factory=list)
    results: list[ToolResultRecord] = Field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""


class FinalAnswer(BaseModel):
    text: str
    cited: list[str] = Field(default_factory=list)


class ReasoningTrace(BaseModel):
    session_id: str
    query: str
    mode: EngineMode = "complete"
    snapshot_digest: str = ""
    steps: list[TraceStep] = Field(default_factory=list)
    evidence: list[EvidenceEntry] = Field(default_factory=list)
    loaded_details: dict[str, str] = Field(default_factory=dict)
    termination: Optional[Termination] = None
    final_answer: Optional[FinalAnswer] = None
    failure: Optional[dict[str, Any]] = None
    tool_turns: int = 0
    approx_tokens_total: int = 0
    trace_path: Optional[str] = None

    def tool_names(self) -> list[str]:
        return [call.tool_name for step in self.steps for call in step.tool_calls]

    def evidence_by_id(self) -> dict[str, EvidenceEntry]:
        return {e.evidence_id: e for e in self.evidence}
