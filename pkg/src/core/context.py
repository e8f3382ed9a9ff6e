# src/core/context.py - Evolving context state: initialization, token estimation, compaction

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, SystemMessage, ToolMessage

from ..models.engine import EngineMode, EvidenceEntry
from ..models.ontology import HyperedgeSummary
from .errors import CompactionError
from .ontology import OntologySnapshot
from .retrieval import TitleMatcher, passive_activate

logger = logging.getLogger(__name__)

DIGEST_MARKER = "[context digest]"
MAX_ARGUMENT_CHARS = 120

BASE_PREAMBLE = """You answer questions about enterprise operations by reasoning over a hypergraph ontology
that describes several business systems, and by querying their read-only snapshots through tools.

Work step by step. Prefer a procedural hyperedge when one matches the question: read its details
and follow its protocol. Otherwise explore the graph, read the declarative hyperedges that bind the
tables you need, and query the data.

Every final answer must cite the evidence it rests on. Each tool result carries an "evidence_id";
cite it in the answer as [[evidence_id]]. Answers without citations are rejected."""


def estimate_tokens(text: str, reported: Optional[int] = None) -> int:
    """Backend-reported usage when available, otherwise ceil(characters / 4)."""
    if reported is not None:
        return reported
    return math.ceil(len(text) / 4)


def render_message(message: BaseMessage) -> str:
    text = message.content if isinstance(message.content, str) else json.dumps(message.content, default=str)
    if isinstance(message, AIMessage) and message.tool_calls:
        text += json.dumps([{"name": c["name"], "args": c["args"]} for c in message.tool_calls],
                           sort_keys=True, default=str)
    return text


def message_record(message: BaseMessage) -> dict[str, Any]:
    """Stable projection of a message, used for step digests."""
    record: dict[str, Any] = {"role": message.type, "content": render_message(message)}
    if isinstance(message, ToolMessage):
        record["tool_call_id"] = message.tool_call_id
    return record


class Digester(Protocol):
    async def summarize(self, messages: Sequence[BaseMessage], session_id: str) -> str: ...


@dataclass
class ContextState:
    system_preamble: str
    active_summaries: list[HyperedgeSummary] = field(default_factory=list)
    loaded_details: dict[str, str] = field(default_factory=dict)
    evidence: list[EvidenceEntry] = field(default_factory=list)
    dialogue: list[BaseMessage] = field(default_factory=list)
    schema_text: str = ""
    approx_tokens: int = 0
    compactions: int = 0

    def system_message(self) -> SystemMessage:
        text = self.system_preamble
        if self.active_summaries:
            listed = "\n".join(f"- {s.id} ({s.kind.value}): {s.title} - {s.description}" for s in self.active_summaries)
            text += f"\n\nHyperedges activated by the question (call hyperedge_read_details for their full text):\n{listed}"
        return SystemMessage(content=text)

    def messages(self) -> list[BaseMessage]:
        return [self.system_message(), *self.dialogue]

    def recompute(self) -> int:
        text = "".join(render_message(m) for m in self.messages()) + self.schema_text
        self.approx_tokens = estimate_tokens(text)
        return self.approx_tokens

    def append(self, message: BaseMessage) -> None:
        self.dialogue.append(message)
        self.recompute()

    def add_evidence(self, entry: EvidenceEntry) -> None:
        self.evidence.append(entry)


def table_catalogue(snapshot: OntologySnapshot) -> str:
    lines = [f"- {n.id} [{n.source}]: {n.name} - {n.description}" for n in snapshot.nodes.values()]
    return "Available tables:\n" + "\n".join(lines)


def init_context(query_text: str, snapshot: OntologySnapshot, matcher: Optional[TitleMatcher],
                 mode: EngineMode = "complete", schema_text: str = "") -> ContextState:
    """Passive activation injects matching summaries only; details stay unloaded."""
    preamble = BASE_PREAMBLE
    summaries: list[HyperedgeSummary] = []
    if mode == "table-list":
        preamble += "\n\n" + table_catalogue(snapshot)
    elif matcher is not None:
        summaries = passive_activate(query_text, matcher)
    context = ContextState(system_preamble=preamble, active_summaries=summaries,
                           dialogue=[HumanMessage(content=query_text)], schema_text=schema_text)
    context.recompute()
    return context


# --- Compaction ---

def _groups(dialogue: list[BaseMessage]) -> list[tuple[int, int]]:
    """(start, end) spans of an assistant tool-call message with its tool results."""
    spans = []
    i = 1
    while i < len(dialogue):
        message = dialogue[i]
        if isinstance(message, AIMessage) and message.tool_calls:
            j = i + 1
            while j < len(dialogue) and isinstance(dialogue[j], ToolMessage):
                j += 1
            spans.append((i, j))
            i = j
        else:
            i += 1
    return spans


def _short(value: Any) -> str:
    text = json.dumps(value, sort_keys=True, default=str)
    return text if len(text) <= MAX_ARGUMENT_CHARS else text[:MAX_ARGUMENT_CHARS] + "..."


def _unique(items: list[str]) -> list[str]:
    return list(dict.fromkeys(items))


def retained_ids(messages: Sequence[BaseMessage]) -> tuple[list[str], list[str], list[str]]:
    """Evidence ids, artifact ids and hyperedge ids mentioned by tool results."""
    evidence, artifacts, hyperedges = [], [], []

    def walk(value: Any) -> None:
        if isinstance(value, dict):
            for key, item in value.items():
                if key == "evidence_id" and isinstance(item, str):
                    evidence.append(item)
                elif key == "artifact_ref" and isinstance(item, str):
                    artifacts.append(item)
                elif isinstance(item, str) and (key == "hyperedge_id" or (key == "id" and item.startswith("hyperedge:"))):
                    hyperedges.append(item)
                else:
                    walk(item)
        elif isinstance(value, list):
            for item in value:
                walk(item)

    for message in messages:
        if isinstance(message, ToolMessage):
            try:
                walk(json.loads(message.content))
            except (json.JSONDecodeError, TypeError):
                continue
        elif isinstance(message, HumanMessage) and isinstance(message.content, str) and message.content.startswith(DIGEST_MARKER):
            for line in message.content.splitlines():
                for prefix, bucket in (("evidence: ", evidence), ("artifacts: ", artifacts), ("hyperedges: ", hyperedges)):
                    if line.startswith(prefix):
                        bucket.extend(x for x in line[len(prefix):].split(", ") if x)
    return _unique(evidence), _unique(artifacts), _unique(hyperedges)


def _id_lines(messages: Sequence[BaseMessage], loaded: dict[str, str]) -> list[str]:
    evidence, artifacts, hyperedges = retained_ids(messages)
    # every loaded detail is kept, whatever its id looks like
    hyperedges = _unique([*loaded, *hyperedges])
    return [f"evidence: {', '.join(evidence)}", f"artifacts: {', '.join(artifacts)}",
            f"hyperedges: {', '.join(hyperedges)}"]


def extractive_digest(messages: Sequence[BaseMessage], loaded: dict[str, str]) -> str:
    """Deterministic digest: one line per tool call plus every id verbatim."""
    lines = [DIGEST_MARKER]
    for message in messages:
        if isinstance(message, AIMessage):
            for call in message.tool_calls:
                lines.append(f"- {call['name']} {_short(call['args'])}")
        elif isinstance(message, HumanMessage) and isinstance(message.content, str) and message.content.startswith(DIGEST_MARKER):
            lines += [l for l in message.content.splitlines()[1:] if l.startswith("- ")]
    return "\n".join(lines + _id_lines(messages, loaded))


async def compact_context(context: ContextState, threshold: int, digester: Optional[Digester] = None,
                          session_id: str = "default") -> Optional[dict[str, Any]]:
    """
    Replaces the oldest tool groups (never the latest one, never the question) with one
    digest message. Returns the compaction event, or None when under the threshold.
    """
    if context.approx_tokens <= threshold:
        return None
    before = context.approx_tokens
    spans = _groups(context.dialogue)
    digests = [i for i, m in enumerate(context.dialogue)
               if isinstance(m, HumanMessage) and isinstance(m.content, str) and m.content.startswith(DIGEST_MARKER)]
    replaceable = spans[:-1]
    if not replaceable and len(digests) <= 1:
        raise CompactionError(f"Context of {before} tokens cannot be compacted below {threshold}",
                              {"approx_tokens": before, "threshold": threshold})

    # everything from the first old group (or digest) up to the last kept group collapses
    last_kept = spans[-1][0] if spans else len(context.dialogue)
    start = min([s for s, _ in replaceable] + digests)
    span = [m for m in context.dialogue[start:last_kept]]
    if digester is not None:
        summary = await digester.summarize(span, session_id)
        text = "\n".join([DIGEST_MARKER, summary.strip(), *_id_lines(span, context.loaded_details)])
    else:
        text = extractive_digest(span, context.loaded_details)
    kept_tail = [m for m in context.dialogue[start:last_kept] if not isinstance(m, (AIMessage, ToolMessage))
                 and not (isinstance(m.content, str) and m.content.startswith(DIGEST_MARKER))]
    context.dialogue = [*context.dialogue[:start], HumanMessage(content=text), *kept_tail,
                        *context.dialogue[last_kept:]]
    after = context.recompute()
    if after >= before:
        raise CompactionError(f"Compaction did not reduce the context ({before} -> {after} tokens)",
                              {"approx_tokens": after, "threshold": threshold})
    context.compactions += 1
    evidence, artifacts, hyperedges = retained_ids([HumanMessage(content=text)])
    logger.info(f"Context Compaction (Session: {session_id}): {before} -> {after} tokens, "
                f"{len(evidence)} evidence ids retained")
    if after > threshold:
        raise CompactionError(f"Context still at {after} tokens after compaction (threshold {threshold})",
                              {"approx_tokens": after, "threshold": threshold})
    return {"before": before, "after": after, "evidence_ids": evidence, "artifact_ids": artifacts,
            "hyperedge_ids": hyperedges}
