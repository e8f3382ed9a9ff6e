# src/models/review.py - Pydantic models for hyperedge drafts and review tickets

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, Field, model_validator

from .ontology import Hyperedge


class DraftOrigin(str, Enum):
    HUMAN = "human"
    LLM_ASSISTED = "llm-assisted"
    AUTO_INSTANTIATED = "auto-instantiated"


class TicketState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class HyperedgeDraft(BaseModel):
    candidate: Hyperedge
    author: str
    origin: DraftOrigin = DraftOrigin.HUMAN
    rationale: str = ""
    # id of the published hyperedge this draft replaces; unset drafts may not reuse an existing id
    updates: Optional[str] = None
    # relative attachment path -> script text; staged per ticket, installed only on approval
    attachment_scripts: dict[str, str] = Field(default_factory=dict)


class CrossScopeFlag(BaseModel):
    hyperedge_id: str
    scope: str


class ReviewTicket(BaseModel):
    ticket_id: str
    draft: HyperedgeDraft
    state: TicketState = TicketState.PENDING
    decided_by: str = ""
    decision_note: str = ""
    cross_scope_flags: list[CrossScopeFlag] = Field(default_factory=list)
    attachment_digests: dict[str, str] = Field(default_factory=dict)
    validation_report: Optional[dict[str, Any]] = None

    @model_validator(mode="after")
    def _decided_iff_not_pending(self) -> "ReviewTicket":
        if bool(self.decided_by) != (self.state != TicketState.PENDING):
            raise ValueError("decided_by must be set exactly when the ticket is decided")
        return self
