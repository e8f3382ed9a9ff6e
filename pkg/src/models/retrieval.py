# src/models/retrieval.py - Pydantic models for hyperedge retrieval

from typing import Literal, Optional

from pydantic import BaseModel, Field

from .ontology import HyperedgeSummary


class RetrievalConfig(BaseModel):
    tau: float = Field(0.35, ge=0.0, description="Composite score threshold, applied after fusion.")
    alpha: float = Field(0.5, ge=0.0, le=1.0, description="Dense weight; 1 - alpha goes to the sparse score.")
    k1: float = Field(1.2, ge=0.0)
    b: float = Field(0.75, ge=0.0, le=1.0)
    top_k: int = Field(8, ge=1)


class EmbeddingConfig(BaseModel):
    provider: Literal["hermetic", "http"] = "hermetic"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    dimension: int = Field(256, ge=1)
    timeout: float = Field(10.0, gt=0)


class SearchRequest(BaseModel):
    text: str = Field(..., min_length=1, description="LLM-generated search query.")
    session_id: str = "default"


class RankedCandidate(BaseModel):
    summary: HyperedgeSummary
    dense_score: float = Field(..., ge=0.0, le=1.0)
    sparse_score_raw: float = Field(..., ge=0.0)
    sparse_score: float = Field(..., ge=0.0, le=1.0, description="Min-max normalized over the pool.")
    composite: float = Field(..., ge=0.0, le=1.0)


class RetrievalResult(BaseModel):
    candidates: list[RankedCandidate] = Field(default_factory=list)
    degraded: bool = False
    warning: Optional[str] = None


class HyperedgeDetails(BaseModel):
    id: str
    title: str
    semantic_details: str
    attachments: list[str] = Field(default_factory=list)
    related_hyperedges: list[str] = Field(default_factory=list)
    member_nodes: list[str] = Field(default_factory=list)
