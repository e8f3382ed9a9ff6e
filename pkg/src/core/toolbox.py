# src/core/toolbox.py - The reasoning engine's tool tiers as langchain tools bound to one session

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Optional, Type

from langchain_core.tools import BaseTool
from langchain_core.utils.function_calling import convert_to_openai_tool
from pydantic import BaseModel, Field, ValidationError

from ..models.access import Constraint, Principal, Provenance, QueryResult
from ..models.engine import EngineMode, ToolCall
from ..models.execution import ExecPolicy
from ..models.ontology import HyperedgeKind
from ..models.retrieval import SearchRequest
from .errors import ModeViolation, ReasonerError, TenantIsolationError
from .explore import HARD_DEPTH_BOUND, discover_paths, inspect_adjacency, related_hyperedges
from .ontology import OntologySnapshot
from .retrieval import Retriever, read_details
from .sandbox import DigestPins, run_attachment, run_command
from .substrate import Substrate

logger = logging.getLogger(__name__)

AuditHook = Callable[[str, dict[str, Any]], None]
HYPEREDGE_TOOLS = ("hyperedge_search", "hyperedge_read_details", "explore_related")


@dataclass
class SessionRuntime:
    """What the tools of one session may touch. The snapshot is pinned for the session's lifetime."""

    session_id: str
    principal: Principal
    mode: EngineMode
    snapshot: OntologySnapshot
    substrate: Substrate
    retriever: Retriever
    audit: AuditHook
    policy: Optional[ExecPolicy] = None
    pins: Optional[DigestPins] = None
    loaded_details: dict[str, str] = field(default_factory=dict)

    @property
    def kinds(self) -> Optional[set[HyperedgeKind]]:
        return {HyperedgeKind.DECLARATIVE} if self.mode == "declarative-only" else None


@dataclass
class ToolOutcome:
    payload: dict[str, Any]
    node_ids: list[str] = field(default_factory=list)
    artifact_refs: list[str] = field(default_factory=list)
    provenance: list[Provenance] = field(default_factory=list)
    row_count: Optional[int] = None


def format_result(payload: dict[str, Any]) -> str:
    """Tool observations are single JSON documents with sorted keys."""
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)


def format_error(error: Exception) -> dict[str, Any]:
    if isinstance(error, ReasonerError):
        return {"error": error.to_dict()}
    if isinstance(error, ValidationError):
        issues = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in error.errors()]
        return {"error": {"code": "invalid_arguments", "message": "; ".join(issues), "detail": {}}}
    return {"error": {"code": "tool_failed", "message": f"{type(error).__name__}: {error}", "detail": {}}}


def _table_payload(result: QueryResult) -> dict[str, Any]:
    return {
        "columns": result.column_names(),
        "rows": result.rows,
        "artifact_ref": result.artifact_ref,
        "row_count": result.row_count,
        "redactions": result.redactions,
    }


# --- Tool argument schemas ---

class SearchInput(BaseModel):
    text: str = Field(description="Search query describing the business concept or protocol you need.")


class ReadDetailsInput(BaseModel):
    hyperedge_id: str = Field(description="Id of the hyperedge whose full semantic details to load.")


class DirectQueryInput(BaseModel):
    node_id: str = Field(description="Graph node (table) to query, e.g. 'table:erp_sales_order'.")
    parameters: dict[str, Any] = Field(default_factory=dict, description="Template placeholders or field filters.")
    statement: Optional[str] = Field(None, description="Optional read-only SELECT over this node's table only.")


class ConstraintInput(BaseModel):
    node_id: str
    field: str
    value: Any


class TopologyQueryInput(BaseModel):
    node_subset: list[str] = Field(description="Connected set of graph nodes to join across systems.")
    constraints: list[ConstraintInput] = Field(default_factory=list, description="Equality filters on node fields.")


class AdjacencyInput(BaseModel):
    node_id: str = Field(description="Graph node whose neighborhood to inspect.")


class PathsInput(BaseModel):
    src_id: str
    dst_id: str
    max_depth: int = Field(3, ge=1, le=HARD_DEPTH_BOUND)
    kind_filter: Literal["base-only", "all-kinds"] = "base-only"


class RelatedInput(BaseModel):
    hyperedge_id: str


class SandboxRunInput(BaseModel):
    argv: list[str] = Field(description="Program and arguments, e.g. ['ls', '-la', 'data'].")


class AttachmentInput(BaseModel):
    hyperedge_id: str
    attachment_index: int = Field(0, ge=0)
    args: list[str] = Field(default_factory=list, description="Arguments appended to the script invocation.")


# --- Tools ---

class ReasonerTool(BaseTool):
    runtime: Any = Field(default=None, exclude=True)

    def _run(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{self.name} only runs asynchronously")


class HyperedgeSearchTool(ReasonerTool):
    name: str = "hyperedge_search"
    description: str = ("Hybrid sparse/dense search over hyperedge summaries. Returns ranked hyperedges "
                        "(declarative business constraints or procedural protocols) above the relevance threshold.")
    args_schema: Type[BaseModel] = SearchInput

    async def _arun(self, text: str) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        result = rt.retriever.search(rt.snapshot, SearchRequest(text=text, session_id=rt.session_id),
                                     kinds=rt.kinds, tenant=rt.principal.tenant)
        candidates = [{**c.summary.model_dump(mode="json"), "composite": round(c.composite, 6)}
                      for c in result.candidates]
        return ToolOutcome(payload={"candidates": candidates, "degraded": result.degraded, "warning": result.warning})


class ReadDetailsTool(ReasonerTool):
    name: str = "hyperedge_read_details"
    description: str = "Loads the full semantic details (soft axioms or protocol steps) of one hyperedge."
    args_schema: Type[BaseModel] = ReadDetailsInput

    async def _arun(self, hyperedge_id: str) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        he = rt.snapshot.hyperedges.get(hyperedge_id)
        if he is not None and rt.kinds is not None and he.kind not in rt.kinds:
            raise ModeViolation(f"'{hyperedge_id}' is {he.kind.value}; this session only reads declarative hyperedges")
        if he is not None and not he.is_global and he.tenant != rt.principal.tenant:
            raise TenantIsolationError(f"Hyperedge '{hyperedge_id}' belongs to another tenant")
        details = read_details(rt.snapshot, hyperedge_id, rt.audit)
        rt.loaded_details[details.id] = details.semantic_details
        return ToolOutcome(payload=details.model_dump(mode="json"), node_ids=list(details.member_nodes))


class DirectQueryTool(ReasonerTool):
    name: str = "data_direct_query"
    description: str = ("Queries one table (graph node) through its query template. Extra parameters named after "
                        "fields filter rows by equality. Large results come back as an artifact reference.")
    args_schema: Type[BaseModel] = DirectQueryInput

    async def _arun(self, node_id: str, parameters: Optional[dict[str, Any]] = None,
                    statement: Optional[str] = None) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        result = rt.substrate.direct_query(rt.principal, node_id, parameters or {}, statement, rt.session_id)
        return ToolOutcome(
            payload={"node_id": node_id, **_table_payload(result)},
            node_ids=[node_id],
            artifact_refs=[result.artifact_ref] if result.artifact_ref else [],
            provenance=[result.provenance],
            row_count=result.row_count,
        )


class TopologyQueryTool(ReasonerTool):
    name: str = "data_topology_query"
    description: str = ("Federated multi-hop retrieval: validates that the node subset is connected, then "
                        "propagates join keys hop by hop across systems. Returns per-hop rows and the joined rows.")
    args_schema: Type[BaseModel] = TopologyQueryInput

    async def _arun(self, node_subset: list[str], constraints: Optional[list[Any]] = None) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        parsed = [Constraint.model_validate(c.model_dump() if isinstance(c, BaseModel) else c)
                  for c in constraints or []]
        result = rt.substrate.topology_query(rt.principal, list(node_subset), parsed, rt.session_id)
        hops = [{"node_id": h.node_id, "via_edge": h.via_edge, "parent": h.parent,
                 "keys_propagated": h.keys_propagated, **_table_payload(h.result)} for h in result.hops]
        refs = [h.result.artifact_ref for h in result.hops if h.result.artifact_ref]
        if result.joined.artifact_ref:
            refs.append(result.joined.artifact_ref)
        return ToolOutcome(
            payload={"order": result.order, "hops": hops, "joined": _table_payload(result.joined)},
            node_ids=list(result.order),
            artifact_refs=refs,
            provenance=[h.result.provenance for h in result.hops] + [result.joined.provenance],
            row_count=result.joined.row_count,
        )


class AdjacencyTool(ReasonerTool):
    name: str = "explore_adjacency"
    description: str = "Lists a table's binary-edge neighbors with join specs, plus its incident hyperedges."
    args_schema: Type[BaseModel] = AdjacencyInput

    async def _arun(self, node_id: str) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        report = inspect_adjacency(rt.snapshot, node_id)
        if rt.mode == "table-list":
            report = report.model_copy(update={"incident_hyperedges": []})
        elif rt.kinds is not None:
            report = report.model_copy(update={
                "incident_hyperedges": [s for s in report.incident_hyperedges if s.kind in rt.kinds],
            })
        return ToolOutcome(payload=report.model_dump(mode="json"), node_ids=[node_id])


class PathsTool(ReasonerTool):
    name: str = "explore_paths"
    description: str = "Enumerates simple paths between two graph nodes up to a bounded depth."
    args_schema: Type[BaseModel] = PathsInput

    async def _arun(self, src_id: str, dst_id: str, max_depth: int = 3,
                    kind_filter: str = "base-only") -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        if rt.mode == "table-list" and kind_filter != "base-only":
            raise ModeViolation("Hyperedge-aware path discovery is unavailable in table-list mode")
        result = discover_paths(rt.snapshot, src_id, dst_id, max_depth, kind_filter)
        return ToolOutcome(
            payload={"paths": [list(p) for p in result.id_paths()], "truncated": result.truncated,
                     "depth_bound": result.depth_bound},
            node_ids=[n for n in (src_id, dst_id) if n in rt.snapshot.nodes],
        )


class RelatedTool(ReasonerTool):
    name: str = "explore_related"
    description: str = "Lists the hyperedges a hyperedge declares as related (one hop)."
    args_schema: Type[BaseModel] = RelatedInput

    async def _arun(self, hyperedge_id: str) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        related = related_hyperedges(rt.snapshot, hyperedge_id)
        if rt.kinds is not None:
            related = [s for s in related if s.kind in rt.kinds]
        return ToolOutcome(payload={"related": [s.model_dump(mode="json") for s in related]})


class SandboxRunTool(ReasonerTool):
    name: str = "sandbox_run"
    description: str = ("Runs an allowlisted program inside the session's sandbox directory with a wall-clock "
                        "limit and no network. Path arguments must stay inside the sandbox.")
    args_schema: Type[BaseModel] = SandboxRunInput

    async def _arun(self, argv: list[str]) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        result = await run_command(list(argv), rt.policy, session_id=rt.session_id, raise_on_violation=False)
        return ToolOutcome(payload=result.model_dump(mode="json"))


class AttachmentTool(ReasonerTool):
    name: str = "sandbox_attachment"
    description: str = "Executes an approved procedural hyperedge's attachment script with the given arguments."
    args_schema: Type[BaseModel] = AttachmentInput

    async def _arun(self, hyperedge_id: str, attachment_index: int = 0,
                    args: Optional[list[str]] = None) -> ToolOutcome:
        rt: SessionRuntime = self.runtime
        if rt.kinds is not None:
            raise ModeViolation("Procedural attachments are unavailable in declarative-only mode")
        result = await run_attachment(rt.snapshot, hyperedge_id, attachment_index, list(args or []), rt.policy,
                                      rt.pins or (lambda _: {}), session_id=rt.session_id, audit=rt.audit)
        he = rt.snapshot.hyperedges[hyperedge_id]
        return ToolOutcome(payload=result.model_dump(mode="json"), node_ids=list(he.member_nodes))


TOOL_CLASSES: tuple[type[ReasonerTool], ...] = (
    HyperedgeSearchTool, ReadDetailsTool, DirectQueryTool, TopologyQueryTool,
    AdjacencyTool, PathsTool, RelatedTool, SandboxRunTool, AttachmentTool,
)


class Toolbox:
    """The tools offered to the backend in one session, keyed by name."""

    def __init__(self, runtime: SessionRuntime):
        self.runtime = runtime
        self.tools: dict[str, ReasonerTool] = {}
        for cls in TOOL_CLASSES:
            tool = cls(runtime=runtime)
            if runtime.mode == "table-list" and tool.name in HYPEREDGE_TOOLS:
                continue
            if tool.name in ("sandbox_run", "sandbox_attachment") and runtime.policy is None:
                continue
            self.tools[tool.name] = tool

    def names(self) -> list[str]:
        return list(self.tools)

    def schemas(self) -> list[dict[str, Any]]:
        return [convert_to_openai_tool(tool) for tool in self.tools.values()]

    async def dispatch(self, call: ToolCall) -> tuple[Optional[ToolOutcome], Optional[dict[str, Any]]]:
        """Returns (outcome, None) on success or (None, error payload); never raises domain errors."""
        tool = self.tools.get(call.tool_name)
        if tool is None:
            error = {"error": {"code": "unknown_tool", "message": f"Tool '{call.tool_name}' is not available",
                               "detail": {"available": self.names()}}}
            return None, error
        try:
            outcome = await tool.ainvoke(call.arguments)
        except (ReasonerError, ValidationError) as e:
            logger.info(f"Tool Dispatch (Session: {self.runtime.session_id}): {call.tool_name} failed: {e}")
            return None, format_error(e)
        except Exception as e:
            logger.error(f"Tool Dispatch (Session: {self.runtime.session_id}): {call.tool_name} crashed: {e}",
                         exc_info=True)
            return None, format_error(e)
        return outcome, None
