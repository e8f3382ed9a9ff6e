# src/core/engine.py - The audited reasoning loop: sessions, steps, citations, budget and compaction

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, SystemMessage, ToolMessage

from ..models.access import DataSource, Principal
from ..models.config import EngineConfig
from ..models.engine import (
    BackendReply, EngineMode, EvidenceEntry, FinalAnswer, Query, ReasoningTrace, StepOutcome, Termination,
    ToolCall, ToolResultRecord, TraceStep,
)
from ..models.ontology import HyperedgeKind
from ..utils.digests import digest_value
from .backends import ChatModelBackend, LlmBackend, ScriptedBackend, load_fixtures
from .builder import ReviewQueue
from .config import backend_api_key, config_digest, session_policy
from .context import ContextState, Digester, compact_context, estimate_tokens, init_context, message_record, render_message
from .embedding import create_embedder
from .errors import BackendError, CitationIntegrityError, CompactionError, ReasonerError
from .ontology import OntologySnapshot, OntologyStore, load_ontology
from .retrieval import Retriever
from .substrate import Substrate
from .toolbox import SessionRuntime, Toolbox, format_result
from .trace import CITATION_PATTERN, TraceWriter, now_iso, trace_path

logger = logging.getLogger(__name__)

FIXTURES_ROOT = Path(__file__).resolve().parent.parent / "scenario" / "fixtures"

FINAL_ANSWER_PROMPT = ("The tool budget for this session is spent. Answer now from the evidence gathered so far, "
                       "citing it as [[evidence_id]].")
CITATION_REMINDER = ("Your answer cites no evidence. Restate it and cite the tool results it rests on "
                     "as [[evidence_id]].")
DIGEST_PROMPT = ("Summarize the following tool exchanges for your own later use. Keep every identifier, "
                 "every number and every finding; drop raw rows.")


def session_id_for(text: str, mode: EngineMode, snapshot: OntologySnapshot, principal: Principal) -> str:
    """Deterministic default id: the same question over the same snapshot gets the same session."""
    return "s-" + digest_value([text, mode, snapshot.digest(), principal.principal_id])[:12]


def principal_record(principal: Principal) -> dict[str, Any]:
    return {"principal_id": principal.principal_id, "roles": sorted(principal.roles), "tenant": principal.tenant,
            "max_visibility_tier": principal.max_visibility_tier}


SHARED_FIXTURES = "shared"


def bundled_fixtures(mode: EngineMode) -> list[Path]:
    """The mode's own protocols first, then the mode-independent ones."""
    return [FIXTURES_ROOT / mode, FIXTURES_ROOT / SHARED_FIXTURES]


class BackendDigester:
    """Compaction digests written by the backend itself."""

    def __init__(self, backend: LlmBackend):
        self.backend = backend

    async def summarize(self, messages: Sequence[BaseMessage], session_id: str) -> str:
        body = "\n\n".join(render_message(m) for m in messages)
        reply = await self.backend.ainvoke([SystemMessage(content=DIGEST_PROMPT), HumanMessage(content=body)], [],
                                           session_id=f"{session_id}-digest")
        return reply.text or ""


@dataclass
class Session:
    session_id: str
    query: Query
    mode: EngineMode
    budget: int
    snapshot: OntologySnapshot
    context: ContextState
    toolbox: Toolbox
    trace: ReasoningTrace
    writer: TraceWriter
    step_index: int = 0
    evidence_counter: int = 0
    citation_retries: int = 0
    finished: bool = False
    known_ids: set[str] = field(default_factory=set)

    def next_evidence_id(self) -> str:
        self.evidence_counter += 1
        return f"{self.session_id}-e{self.evidence_counter:03d}"


class ReasoningEngine:
    """Runs sessions over a shared ontology store and substrate. One session is strictly sequential."""

    def __init__(self, store: OntologyStore, substrate: Substrate, backend: LlmBackend, config: EngineConfig,
                 retriever: Optional[Retriever] = None, queue: Optional[ReviewQueue] = None,
                 digester: Optional[Digester] = None):
        self.store = store
        self.substrate = substrate
        self.backend = backend
        self.config = config
        self.retriever = retriever or Retriever(create_embedder(config.embedding), config.retrieval)
        self.queue = queue
        self.digester = digester
        self.config_digest = config_digest(config)

    # --- Session lifecycle ---

    def open_session(self, query: Query) -> Session:
        mode = query.mode or self.config.mode
        budget = self.config.budget if query.budget is None else query.budget
        snapshot = self.store.snapshot
        principal = query.principal
        session_id = query.session_id or session_id_for(query.text, mode, snapshot, principal)
        self.substrate.release_session(session_id)

        kinds = {HyperedgeKind.DECLARATIVE} if mode == "declarative-only" else None
        matcher = None if mode == "table-list" else self.retriever.matcher(snapshot, kinds, principal.tenant)
        writer = TraceWriter(trace_path(self.config.trace_dir, session_id))
        runtime = SessionRuntime(
            session_id=session_id, principal=principal, mode=mode, snapshot=snapshot, substrate=self.substrate,
            retriever=self.retriever, audit=writer.event,
            policy=session_policy(self.config, session_id),
            pins=self.queue.pinned_digests if self.queue is not None else None,
        )
        toolbox = Toolbox(runtime)
        schema_text = json.dumps(toolbox.schemas(), sort_keys=True)
        context = init_context(query.text, snapshot, matcher, mode, schema_text)
        runtime.loaded_details = context.loaded_details

        trace = ReasoningTrace(session_id=session_id, query=query.text, mode=mode, snapshot_digest=snapshot.digest(),
                               trace_path=str(writer.path))
        writer.header(session_id, query.text, mode, snapshot.digest(), self.config_digest, budget,
                      principal_record(principal))
        for summary in context.active_summaries:
            writer.event("activation", {"hyperedge_id": summary.id, "title": summary.title})
        logger.info(f"Reasoning Session (Session: {session_id}): opened in {mode} mode, budget {budget}, "
                    f"{len(context.active_summaries)} hyperedges activated")
        return Session(session_id=session_id, query=query, mode=mode, budget=budget, snapshot=snapshot,
                       context=context, toolbox=toolbox, trace=trace, writer=writer)

    def _finish(self, session: Session, termination: Termination, failure: Optional[ReasonerError] = None) -> None:
        trace = session.trace
        trace.termination = termination
        trace.loaded_details = dict(session.context.loaded_details)
        if failure is not None:
            trace.failure = failure.to_dict()
        session.writer.terminate(trace)
        session.writer.close()
        self.backend.end_session(session.session_id)
        session.finished = True
        logger.info(f"Reasoning Session (Session: {session.session_id}): {termination.value} after "
                    f"{trace.tool_turns} tool turns, ~{trace.approx_tokens_total} tokens")

    def _record(self, session: Session, kind: str, digest: str, started: str, calls: list[ToolCall] = (),
                results: list[ToolResultRecord] = (), evidence: list[EvidenceEntry] = ()) -> None:
        step = TraceStep(index=session.step_index, message_digest=digest, kind=kind, tool_calls=list(calls),
                         results=list(results), started_at=started, finished_at=now_iso())
        session.trace.steps.append(step)
        session.writer.step(step, list(evidence))
        session.step_index += 1

    # --- One iteration ---

    async def _call_backend(self, session: Session, messages: list[BaseMessage],
                            tools: list[dict[str, Any]]) -> BackendReply:
        attempts = self.config.backend.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                return await self.backend.ainvoke(messages, tools, session_id=session.session_id)
            except BackendError as e:
                logger.warning(f"Reasoning Session (Session: {session.session_id}): backend attempt "
                               f"{attempt}/{attempts} failed: {e}")
                session.writer.event("backend_retry", {"attempt": attempt, "error": e.message})
                if attempt == attempts:
                    raise

    async def _dispatch(self, session: Session, calls: list[ToolCall]) -> tuple[list[ToolResultRecord], list[EvidenceEntry]]:
        results, admitted = [], []
        for call in calls:
            outcome, error = await session.toolbox.dispatch(call)
            if outcome is None:
                content = format_result(error)
                results.append(ToolResultRecord(call_id=call.call_id, tool_name=call.tool_name, ok=False,
                                                content=content, error=error["error"]))
            else:
                evidence_id = session.next_evidence_id()
                content = format_result({**outcome.payload, "evidence_id": evidence_id})
                entry = EvidenceEntry(evidence_id=evidence_id, call_id=call.call_id, tool_name=call.tool_name,
                                      node_ids=outcome.node_ids, artifact_refs=outcome.artifact_refs,
                                      provenance=outcome.provenance, row_count=outcome.row_count)
                session.context.add_evidence(entry)
                session.trace.evidence.append(entry)
                session.known_ids.update([evidence_id, *outcome.artifact_refs])
                admitted.append(entry)
                results.append(ToolResultRecord(call_id=call.call_id, tool_name=call.tool_name, ok=True,
                                                evidence_id=evidence_id, artifact_refs=outcome.artifact_refs,
                                                content=content))
            session.context.append(ToolMessage(content=content, tool_call_id=call.call_id))
        return results, admitted

    async def step(self, session: Session) -> StepOutcome:
        """One backend round-trip. A batch of tool calls counts as a single tool turn."""
        if session.finished:
            raise ReasonerError(f"Session '{session.session_id}' has already terminated")
        if session.budget == 0:
            self._finish(session, Termination.BUDGET_EXHAUSTED)
            return StepOutcome.FAILED

        try:
            event = await compact_context(session.context, self.config.compaction_threshold, self.digester,
                                          session.session_id)
        except CompactionError as e:
            self._finish(session, Termination.FAILED, e)
            return StepOutcome.FAILED
        if event is not None:
            session.writer.event("compaction", event)

        closing = session.trace.tool_turns >= session.budget
        messages = session.context.messages()
        if closing:
            messages.append(HumanMessage(content=FINAL_ANSWER_PROMPT))
        tools = [] if closing else session.toolbox.schemas()
        started = now_iso()
        try:
            reply = await self._call_backend(session, messages, tools)
        except BackendError as e:
            self._record(session, "backend-failure", digest_value([message_record(m) for m in messages]), started)
            self._finish(session, Termination.FAILED, e)
            return StepOutcome.FAILED

        if reply.is_tool_turn:
            assistant = AIMessage(content="", tool_calls=[
                {"name": c.tool_name, "args": c.arguments, "id": c.call_id} for c in reply.tool_calls
            ])
        else:
            assistant = AIMessage(content=reply.text or "")
        digest = digest_value([message_record(m) for m in [*messages, assistant]])
        spent = estimate_tokens(render_message(assistant))
        if reply.usage_tokens is not None:
            session.trace.approx_tokens_total += reply.usage_tokens
        else:
            session.trace.approx_tokens_total += session.context.approx_tokens + spent

        if reply.is_tool_turn:
            if closing:
                logger.info(f"Reasoning Session (Session: {session.session_id}): tool calls after the budget was spent")
                self._finish(session, Termination.BUDGET_EXHAUSTED)
                return StepOutcome.FAILED
            session.context.append(assistant)
            results, admitted = await self._dispatch(session, reply.tool_calls)
            session.trace.tool_turns += 1
            self._record(session, "tool", digest, started, reply.tool_calls, results, admitted)
            return StepOutcome.CONTINUE
        return self._conclude(session, reply.text or "", assistant, digest, started)

    def _conclude(self, session: Session, text: str, assistant: AIMessage, digest: str, started: str) -> StepOutcome:
        cited = list(dict.fromkeys(CITATION_PATTERN.findall(text)))
        unknown = [c for c in cited if c not in session.known_ids]
        if unknown:
            self._record(session, "rejected-answer", digest, started)
            self._finish(session, Termination.FAILED, CitationIntegrityError(
                f"Answer cites evidence that no step produced: {unknown}", {"unknown": unknown}))
            return StepOutcome.FAILED
        if not cited:
            self._record(session, "rejected-answer", digest, started)
            if session.citation_retries >= 1:
                self._finish(session, Termination.FAILED, CitationIntegrityError(
                    "Answer cites no evidence after a reminder", {"text": text}))
                return StepOutcome.FAILED
            session.citation_retries += 1
            session.context.append(assistant)
            session.context.append(HumanMessage(content=CITATION_REMINDER))
            return StepOutcome.CONTINUE

        session.context.append(assistant)
        self._record(session, "answer", digest, started)
        session.trace.final_answer = FinalAnswer(text=text, cited=cited)
        self._finish(session, Termination.ANSWERED)
        return StepOutcome.ANSWERED

    async def run_session(self, query: Query) -> ReasoningTrace:
        session = self.open_session(query)
        try:
            while not session.finished:
                await self.step(session)
        except Exception as e:
            logger.error(f"Reasoning Session (Session: {session.session_id}): aborted: {e}", exc_info=True)
            if not session.finished:
                failure = e if isinstance(e, ReasonerError) else ReasonerError(f"{type(e).__name__}: {e}")
                self._finish(session, Termination.FAILED, failure)
        return session.trace

    async def run_query(self, text: str, principal: Optional[Principal] = None, *, budget: Optional[int] = None,
                        mode: Optional[EngineMode] = None, session_id: Optional[str] = None) -> ReasoningTrace:
        query = Query(text=text, principal=principal or self.config.principal.to_principal(), budget=budget,
                      mode=mode, session_id=session_id)
        return await self.run_session(query)


# --- Assembly from configuration ---

def create_backend(config: EngineConfig, mode: Optional[EngineMode] = None) -> LlmBackend:
    if config.backend.provider == "http":
        if not config.backend.endpoint:
            raise ReasonerError("The http backend needs backend.endpoint in the configuration")
        return ChatModelBackend(config.backend.endpoint, config.backend.model, backend_api_key(),
                                config.backend.timeout)
    directories = [config.backend.fixtures] if config.backend.fixtures else bundled_fixtures(mode or config.mode)
    fixtures = [f for directory in directories for f in load_fixtures(directory)]
    return ScriptedBackend(fixtures, config.artifact_dir)


def open_substrate(config: EngineConfig, store: OntologyStore) -> Substrate:
    substrate = Substrate(store, config.artifact_dir,
                          persist_rows=config.substrate.persist_row_threshold,
                          persist_bytes=config.substrate.persist_byte_threshold,
                          key_batch=config.substrate.key_batch_size,
                          key_cap=config.substrate.key_propagation_cap)
    for tag, path in sorted(config.sources.items()):
        substrate.register_source(DataSource(source_id=tag, location=str(path)))
    return substrate


def build_engine(config: EngineConfig, backend: Optional[LlmBackend] = None,
                 store: Optional[OntologyStore] = None) -> ReasoningEngine:
    """Loads the ontology and sources named by the config and wires one engine over them."""
    store = store or load_ontology(config.ontology_root)
    backend = backend or create_backend(config)
    digester = BackendDigester(backend) if config.backend.provider == "http" else None
    return ReasoningEngine(
        store=store,
        substrate=open_substrate(config, store),
        backend=backend,
        config=config,
        queue=ReviewQueue(store.root),
        digester=digester,
    )
