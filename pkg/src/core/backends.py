# src/core/backends.py - LLM backends: the HTTP chat model and the deterministic scripted stand-in

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence

from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, ToolMessage
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..models.engine import BackendReply, ToolCall
from .artifacts import iter_records
from .documents import list_documents, read_document
from .errors import BackendError, ConfigError, ReasonerError

logger = logging.getLogger(__name__)

TEMPLATE_PATTERN = re.compile(r"\$\{([^}]+)\}")


class LlmBackend(Protocol):
    """Given the message list and advertised tool schemas, returns tool calls or final text."""

    async def ainvoke(self, messages: Sequence[BaseMessage], tools: list[dict[str, Any]], *,
                      session_id: str) -> BackendReply: ...

    def end_session(self, session_id: str) -> None: ...


def message_text(content: Any) -> str:
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        parts = [p if isinstance(p, str) else p.get("text", "") for p in content]
        return "".join(parts)
    return str(content)


# --- HTTP chat backend ---

class ChatModelBackend:
    """OpenAI-compatible chat endpoint through langchain-openai; tool schemas are bound per call."""

    def __init__(self, endpoint: str, model: str, api_key: Optional[str], timeout: float = 60.0):
        from langchain_openai import ChatOpenAI

        self.model = model
        self.llm = ChatOpenAI(model=model, base_url=endpoint or None, api_key=api_key or "unset",
                              timeout=timeout, max_retries=0, temperature=0)

    async def ainvoke(self, messages: Sequence[BaseMessage], tools: list[dict[str, Any]], *,
                      session_id: str) -> BackendReply:
        runnable = self.llm.bind_tools(tools) if tools else self.llm
        try:
            reply: AIMessage = await runnable.ainvoke(list(messages))
        except Exception as e:
            logger.error(f"Backend Call (Session: {session_id}): {self.model} failed: {e}")
            raise BackendError(f"Backend call failed: {e}", {"model": self.model})
        calls = [
            ToolCall(call_id=c.get("id") or f"call-{i}", tool_name=c["name"], arguments=c.get("args") or {})
            for i, c in enumerate(reply.tool_calls or [])
        ]
        usage = (reply.usage_metadata or {}).get("total_tokens")
        text = None if calls else message_text(reply.content)
        return BackendReply(text=text, tool_calls=calls, usage_tokens=usage)

    def end_session(self, session_id: str) -> None:
        pass


# --- Scripted backend ---

class ScriptedCall(BaseModel):
    tool: str
    args: dict[str, Any] = Field(default_factory=dict)


class ScriptedRule(BaseModel):
    when: list[dict[str, Any]] = Field(default_factory=list)
    text: str = ""
    cite: list[str] = Field(default_factory=list)


class ScriptedBranch(BaseModel):
    when: list[dict[str, Any]] = Field(default_factory=list)
    goto: str


class ScriptedAnswer(BaseModel):
    reduce: dict[str, dict[str, Any]] = Field(default_factory=dict)
    rules: list[ScriptedRule] = Field(default_factory=list)
    otherwise: Optional[ScriptedRule] = None
    text: Optional[str] = None
    cite: list[str] = Field(default_factory=list)


class ScriptedState(BaseModel):
    calls: list[ScriptedCall] = Field(default_factory=list)
    bind: dict[str, dict[str, Any]] = Field(default_factory=dict)
    branch: list[ScriptedBranch] = Field(default_factory=list)
    next: Optional[str] = None
    answer: Optional[ScriptedAnswer] = None

    @model_validator(mode="after")
    def _calls_xor_answer(self) -> "ScriptedState":
        if bool(self.calls) == (self.answer is not None):
            raise ValueError("a state has either calls or an answer")
        return self


class ScriptFixture(BaseModel):
    """A versioned protocol: question pattern, start state and a state graph of tool batches."""

    name: str
    match: str
    start: str
    states: dict[str, ScriptedState]

    @model_validator(mode="after")
    def _targets_exist(self) -> "ScriptFixture":
        re.compile(self.match)
        targets = [self.start]
        for state in self.states.values():
            targets += [b.goto for b in state.branch] + ([state.next] if state.next else [])
            if state.calls and not state.next and not state.branch:
                raise ValueError("a state with calls needs a successor")
        missing = sorted({t for t in targets if t not in self.states})
        if missing:
            raise ValueError(f"unknown states referenced: {missing}")
        return self


def load_fixtures(directory: Path) -> list[ScriptFixture]:
    fixtures = []
    for path in list_documents(Path(directory)):
        try:
            fixtures.append(ScriptFixture.model_validate(read_document(path)))
        except (ValidationError, ReasonerError) as e:
            raise ConfigError(f"Invalid scripted fixture {path}: {e}", {"path": str(path)})
    return fixtures


@dataclass
class ScriptSession:
    fixture: Optional[ScriptFixture]
    bindings: dict[str, Any]
    state: Optional[str]
    awaiting: Optional[str] = None
    pending: list[str] = field(default_factory=list)
    results: dict[str, dict[str, Any]] = field(default_factory=dict)


def _number(value: Any) -> Optional[float]:
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


_COMPARATORS = {
    "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b, "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b, "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
}


def _row_matches(row: dict[str, Any], cond: dict[str, Any]) -> bool:
    if "left" in cond:
        left, right = _number(row.get(cond["left"])), _number(row.get(cond["right"]))
        return left is not None and right is not None and _COMPARATORS[cond.get("op", "eq")](left, right)
    value = row.get(cond["field"])
    text = None if value is None else str(value)
    if "equals" in cond:
        return text == str(cond["equals"])
    if "in" in cond:
        return text in {str(v) for v in cond["in"]}
    if "not_in" in cond:
        return text not in {str(v) for v in cond["not_in"]}
    return value is not None


class ScriptedBackend:
    """
    Deterministic stand-in for the chat model. Each session follows the first
    fixture whose pattern matches the question; tool results arriving as tool
    messages feed bindings, branch conditions and answer reducers.
    """

    def __init__(self, fixtures: list[ScriptFixture], artifact_root: Optional[Path] = None):
        self.fixtures = fixtures
        self.artifact_root = Path(artifact_root) if artifact_root is not None else None
        self._sessions: dict[str, ScriptSession] = {}

    def end_session(self, session_id: str) -> None:
        self._sessions.pop(session_id, None)

    def _open(self, session_id: str, messages: Sequence[BaseMessage]) -> ScriptSession:
        session = self._sessions.get(session_id)
        if session is not None:
            return session
        question = next((message_text(m.content) for m in messages if isinstance(m, HumanMessage)), "")
        for fixture in self.fixtures:
            found = re.search(fixture.match, question)
            if found:
                bindings = {k: v for k, v in found.groupdict().items() if v is not None}
                session = ScriptSession(fixture=fixture, bindings=bindings, state=fixture.start)
                logger.info(f"Scripted Backend (Session: {session_id}): following fixture '{fixture.name}'")
                break
        else:
            logger.warning(f"Scripted Backend (Session: {session_id}): no fixture matches the question")
            session = ScriptSession(fixture=None, bindings={}, state=None)
        self._sessions[session_id] = session
        return session

    # --- Result access ---

    def _result(self, session: ScriptSession, ref: str) -> Optional[dict[str, Any]]:
        state, _, index = ref.partition(".")
        return session.results.get(f"{state}:{index or 0}")

    def _table(self, result: Optional[dict[str, Any]], node: Optional[str]) -> Optional[tuple[list[dict], int]]:
        if result is None or "error" in result:
            return None
        if node == "joined":
            table = result.get("joined")
        elif "hops" in result:
            table = next((h for h in result["hops"] if h.get("node_id") == node), None)
        elif node is None or result.get("node_id") == node:
            table = result
        else:
            table = None
        if table is None:
            return None
        if "columns" not in table:
            # non-tabular payloads (adjacency, details) read as one row of their top-level fields
            return [table], 1
        columns = table.get("columns") or []
        rows = table.get("rows")
        if rows is None and table.get("artifact_ref") and self.artifact_root is not None:
            rows = list(iter_records(self.artifact_root, table["artifact_ref"]))
        if rows is None:
            return None
        return [dict(zip(columns, row)) for row in rows], int(table.get("row_count", len(rows)))

    def _holds(self, session: ScriptSession, cond: dict[str, Any]) -> bool:
        result = self._result(session, cond["call"])
        if cond.get("failed"):
            return result is not None and "error" in result
        table = self._table(result, cond.get("node"))
        if table is None:
            return False
        rows, count = table
        if "rows" in cond:
            return count == int(cond["rows"])
        if "rows_gt" in cond:
            return count > int(cond["rows_gt"])
        return any(_row_matches(row, cond) for row in rows)

    def _all_hold(self, session: ScriptSession, conditions: list[dict[str, Any]]) -> bool:
        return all(self._holds(session, c) for c in conditions)

    def _reduce(self, session: ScriptSession, spec: dict[str, Any]) -> Any:
        table = self._table(self._result(session, spec["call"]), spec.get("node"))
        if table is None:
            raise BackendError(f"Reducer input {spec['call']}/{spec.get('node')} is unavailable")
        rows = [r for r in table[0] if all(_row_matches(r, w) for w in spec.get("where", []))]
        op = spec.get("op", "first")
        name = spec.get("field")
        if op == "count":
            return len(rows)
        if op == "sum":
            return sum(_number(r.get(name)) or 0 for r in rows)
        if op == "distinct":
            return sorted({str(r[name]) for r in rows if r.get(name) is not None})
        if op == "top_counts":
            counts: dict[str, int] = {}
            for r in rows:
                if r.get(name) is not None:
                    counts[str(r[name])] = counts.get(str(r[name]), 0) + 1
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: int(spec.get("n", 3))]
            return [f"{value} ({count})" for value, count in ranked]
        if op == "first":
            return rows[0].get(name) if rows else None
        raise BackendError(f"Unknown reducer '{op}'")

    # --- Rendering ---

    @staticmethod
    def _format(value: Any) -> str:
        if isinstance(value, float) and value.is_integer():
            return str(int(value))
        if isinstance(value, list):
            return ", ".join(ScriptedBackend._format(v) for v in value)
        return "" if value is None else str(value)

    def _lookup(self, session: ScriptSession, name: str, reduced: dict[str, Any]) -> Any:
        if name.startswith("ev."):
            result = self._result(session, name[3:])
            if result is None or "evidence_id" not in result:
                raise BackendError(f"No evidence recorded for '{name[3:]}'")
            return result["evidence_id"]
        if name.startswith("reduce."):
            return reduced[name[7:]]
        if name in session.bindings:
            return session.bindings[name]
        raise BackendError(f"Unbound template name '{name}'")

    def _render(self, session: ScriptSession, value: Any, reduced: dict[str, Any]) -> Any:
        if isinstance(value, str):
            whole = TEMPLATE_PATTERN.fullmatch(value)
            if whole:
                found = self._lookup(session, whole.group(1).strip(), reduced)
                return found if isinstance(found, list) else self._format(found)
            return TEMPLATE_PATTERN.sub(
                lambda m: self._format(self._lookup(session, m.group(1).strip(), reduced)), value
            )
        if isinstance(value, dict):
            return {k: self._render(session, v, reduced) for k, v in value.items()}
        if isinstance(value, list):
            return [self._render(session, v, reduced) for v in value]
        return value

    # --- Protocol ---

    def _ingest(self, session: ScriptSession, messages: Sequence[BaseMessage]) -> None:
        for message in messages:
            if isinstance(message, ToolMessage) and message.tool_call_id in session.pending:
                try:
                    session.results[message.tool_call_id] = json.loads(message_text(message.content))
                except json.JSONDecodeError:
                    session.results[message.tool_call_id] = {"error": {"message": message_text(message.content)}}
        if session.awaiting is None or any(c not in session.results for c in session.pending):
            return
        state = session.fixture.states[session.awaiting]
        for name, spec in state.bind.items():
            session.bindings[name] = self._reduce(session, spec)
        successor = next((b.goto for b in state.branch if self._all_hold(session, b.when)), state.next)
        session.state, session.awaiting, session.pending = successor, None, []

    def _answer(self, session: ScriptSession, answer: ScriptedAnswer) -> str:
        reduced = {name: self._reduce(session, spec) for name, spec in answer.reduce.items()}
        rule = next((r for r in answer.rules if self._all_hold(session, r.when)), answer.otherwise)
        if rule is None:
            rule = ScriptedRule(text=answer.text or "", cite=answer.cite)
        text = self._render(session, rule.text, reduced).rstrip()
        cited = [self._lookup(session, f"ev.{ref}", reduced) for ref in rule.cite]
        if cited:
            text += "\n\nEvidence: " + " ".join(f"[[{c}]]" for c in cited)
        return text

    async def ainvoke(self, messages: Sequence[BaseMessage], tools: list[dict[str, Any]], *,
                      session_id: str) -> BackendReply:
        session = self._open(session_id, messages)
        if session.fixture is None:
            return BackendReply(text="No scripted protocol covers this question.")
        self._ingest(session, messages)
        if session.awaiting is not None:
            raise BackendError(f"Scripted session {session_id} is still waiting for {session.pending}")

        state = session.fixture.states[session.state]
        if state.answer is not None:
            return BackendReply(text=self._answer(session, state.answer))

        calls = []
        for index, call in enumerate(state.calls):
            calls.append(ToolCall(
                call_id=f"{session.state}:{index}", tool_name=call.tool,
                arguments=self._render(session, call.args, {}),
            ))
        session.awaiting = session.state
        session.pending = [c.call_id for c in calls]
        return BackendReply(tool_calls=calls)
