# src/core/trace.py - Append-only, hash-chained session trace files and their offline verifier

import json
import logging
import re
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from ..models.engine import EvidenceEntry, FinalAnswer, ReasoningTrace, Termination, TraceStep
from ..models.execution import sanitize_session_id
from ..utils.digests import digest_value
from .errors import TraceIntegrityError

logger = logging.getLogger(__name__)

TRACE_SUFFIX = ".trace.jsonl"
GENESIS_DIGEST = "0" * 64
VOLATILE_KEYS = frozenset({"ts", "timestamp", "started_at", "finished_at", "duration"})
CITATION_PATTERN = re.compile(r"\[\[([^\]]+)\]\]")


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def trace_path(trace_dir: Path, session_id: str) -> Path:
    return Path(trace_dir) / f"{sanitize_session_id(session_id)}{TRACE_SUFFIX}"


def strip_volatile(value: Any) -> Any:
    """Drops wall-clock fields at every depth; what remains is reproducible."""
    if isinstance(value, dict):
        return {k: strip_volatile(v) for k, v in value.items() if k not in VOLATILE_KEYS}
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def record_digest(record: dict[str, Any]) -> str:
    body = {k: v for k, v in record.items() if k != "digest"}
    return digest_value(strip_volatile(body))


def rechain(records: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Renumbers and re-digests records in order. Used to build well-chained fixtures."""
    prev = GENESIS_DIGEST
    out = []
    for seq, record in enumerate(records):
        record = {**record, "seq": seq, "prev_digest": prev}
        record["digest"] = record_digest(record)
        prev = record["digest"]
        out.append(record)
    return out


class TraceWriter:
    """Writes one record per line and flushes it immediately, so a crashed session still leaves its trace."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seq = 0
        self._prev = GENESIS_DIGEST
        self._lock = threading.Lock()
        self._file = open(self.path, "w", encoding="utf-8")

    def _write(self, record_type: str, body: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            record = {"seq": self._seq, "type": record_type, "ts": now_iso(), **body, "prev_digest": self._prev}
            record["digest"] = record_digest(record)
            self._file.write(json.dumps(record, sort_keys=True, ensure_ascii=False, default=str) + "\n")
            self._file.flush()
            self._seq += 1
            self._prev = record["digest"]
            return record

    def header(self, session_id: str, query: str, mode: str, snapshot_digest: str, config_digest: str,
               budget: int, principal: dict[str, Any]) -> None:
        self._write("header", {
            "session_id": session_id, "query": query, "mode": mode, "snapshot_digest": snapshot_digest,
            "config_digest": config_digest, "budget": budget, "principal": principal,
        })

    def step(self, step: TraceStep, evidence: list[EvidenceEntry]) -> None:
        self._write("step", {
            "step": step.model_dump(mode="json"),
            "evidence": [e.model_dump(mode="json") for e in evidence],
        })

    def event(self, kind: str, data: dict[str, Any]) -> None:
        self._write("event", {"event": kind, "data": data})

    def terminate(self, trace: ReasoningTrace) -> None:
        self._write("termination", {
            "termination": trace.termination.value if trace.termination else None,
            "final_answer": trace.final_answer.model_dump(mode="json") if trace.final_answer else None,
            "failure": trace.failure,
            "tool_turns": trace.tool_turns,
            "approx_tokens_total": trace.approx_tokens_total,
            "loaded_details": trace.loaded_details,
        })

    def close(self) -> None:
        with self._lock:
            if not self._file.closed:
                self._file.close()


# --- Reading ---

def load_trace(path: Path) -> list[dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for index, line in enumerate(f):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceIntegrityError(f"Record {index} is not valid JSON: {e}", "parse", index)
            if not isinstance(record, dict):
                raise TraceIntegrityError(f"Record {index} is not an object", "parse", index)
            records.append(record)
    return records


def normalized_lines(path: Path) -> list[str]:
    """Trace content with timestamps removed, for run-to-run comparison."""
    return [json.dumps(strip_volatile(r), sort_keys=True) for r in load_trace(path)]


def rebuild_trace(records: list[dict[str, Any]]) -> ReasoningTrace:
    header = records[0]
    trace = ReasoningTrace(session_id=header["session_id"], query=header["query"], mode=header["mode"],
                           snapshot_digest=header.get("snapshot_digest", ""))
    for record in records[1:]:
        if record["type"] == "step":
            trace.steps.append(TraceStep.model_validate(record["step"]))
            trace.evidence.extend(EvidenceEntry.model_validate(e) for e in record.get("evidence", []))
        elif record["type"] == "termination":
            trace.termination = Termination(record["termination"]) if record.get("termination") else None
            if record.get("final_answer"):
                trace.final_answer = FinalAnswer.model_validate(record["final_answer"])
            trace.failure = record.get("failure")
            trace.tool_turns = record.get("tool_turns", 0)
            trace.approx_tokens_total = record.get("approx_tokens_total", 0)
            trace.loaded_details = dict(record.get("loaded_details") or {})
    return trace


# --- Verification ---

def _fail(message: str, invariant: str, index: Optional[int]) -> TraceIntegrityError:
    logger.warning(f"Trace Verification: {invariant} violated at record {index}: {message}")
    return TraceIntegrityError(message, invariant, index)


def _check_chain(records: list[dict[str, Any]]) -> None:
    prev = GENESIS_DIGEST
    for index, record in enumerate(records):
        if record.get("seq") != index:
            raise _fail(f"Expected seq {index}, found {record.get('seq')}", "hash-chain", index)
        if record.get("prev_digest") != prev:
            raise _fail("prev_digest does not match the preceding record", "hash-chain", index)
        if record.get("digest") != record_digest(record):
            raise _fail("Record content does not match its digest", "hash-chain", index)
        prev = record["digest"]


def verify_records(records: list[dict[str, Any]]) -> dict[str, Any]:
    """Re-checks every trace invariant. Raises TraceIntegrityError naming the first one violated."""
    if not records:
        raise _fail("Trace is empty", "header", None)
    _check_chain(records)

    headers = [i for i, r in enumerate(records) if r.get("type") == "header"]
    if headers != [0]:
        raise _fail("Exactly one header must open the trace", "header", headers[1] if headers[1:] else 0)
    terminations = [i for i, r in enumerate(records) if r.get("type") == "termination"]
    if terminations != [len(records) - 1]:
        where = terminations[0] if terminations else len(records) - 1
        raise _fail("Exactly one termination record must close the trace", "termination", where)

    budget = records[0].get("budget")
    last_index = -1
    tool_steps = 0
    known: set[str] = set()
    for index, record in enumerate(records):
        if record.get("type") != "step":
            continue
        step = record.get("step") or {}
        if step.get("index", -1) <= last_index:
            raise _fail(f"Step index {step.get('index')} does not increase", "step-order", index)
        last_index = step["index"]
        if step.get("kind") == "tool":
            tool_steps += 1
            if budget is not None and tool_steps > budget:
                raise _fail(f"{tool_steps} tool turns exceed the budget of {budget}", "budget", index)
        for entry in record.get("evidence", []):
            known.add(entry.get("evidence_id"))
            known.update(entry.get("artifact_refs") or [])

    closing = records[-1]
    if closing.get("tool_turns") != tool_steps:
        raise _fail(f"Termination claims {closing.get('tool_turns')} tool turns, trace holds {tool_steps}",
                    "tool-turns", len(records) - 1)
    if budget is not None and closing.get("tool_turns", 0) > budget:
        raise _fail(f"{closing.get('tool_turns')} tool turns exceed the budget of {budget}", "budget",
                    len(records) - 1)
    answer = closing.get("final_answer")
    if closing.get("termination") == Termination.ANSWERED.value:
        if not answer or not answer.get("cited"):
            raise _fail("An answered session must cite at least one evidence id", "citation", len(records) - 1)
    if answer:
        missing = [c for c in answer.get("cited", []) if c not in known]
        if missing:
            raise _fail(f"Cited ids not present in any step: {missing}", "citation", len(records) - 1)

    return {
        "session_id": records[0].get("session_id"),
        "records": len(records),
        "tool_turns": tool_steps,
        "termination": closing.get("termination"),
    }


def verify_trace(source: Union[Path, Iterable[dict[str, Any]]]) -> dict[str, Any]:
    records = load_trace(source) if isinstance(source, (str, Path)) else list(source)
    return verify_records(records)
