# src/scenario/judge.py - Rule-based verdicts for final answers against generated ground truth

import logging
import re

from ..core.trace import CITATION_PATTERN
from ..models.engine import ReasoningTrace
from ..models.scenario import BlockageKind, EvalQuestion, PredicatePart, Verdict

logger = logging.getLogger(__name__)

EVIDENCE_LINE = re.compile(r"^\s*Evidence:.*$", re.MULTILINE)


def answer_body(text: str) -> str:
    """The answer with citation markers and the trailing evidence line removed."""
    return CITATION_PATTERN.sub(" ", EVIDENCE_LINE.sub("", text))


def mentions(text: str, token: str) -> bool:
    """Case-insensitive whole-token match; 'ERP' does not match inside 'erp_sales_order'."""
    return re.search(rf"(?<!\w){re.escape(token)}(?!\w)", text, re.IGNORECASE) is not None


def part_holds(text: str, part: PredicatePart) -> bool:
    return all(mentions(text, token) for token in part.expected)


def _judge_brca(question: EvalQuestion, trace: ReasoningTrace, text: str) -> Verdict:
    label = question.label
    named = [kind.value for kind in BlockageKind if mentions(text, kind.value)]
    evidence = trace.evidence_by_id()
    cited = [evidence[c] for c in trace.final_answer.cited if c in evidence]
    checks = {
        "kind": named == [label.kind.value],
        "blocking-stage": mentions(text, label.blocking_stage),
        "stage-evidence": any(label.blocking_stage in entry.node_ids for entry in cited),
    }
    matched = [name for name, ok in checks.items() if ok]
    unmatched = [name for name, ok in checks.items() if not ok]
    return Verdict(question_id=question.question_id, label="correct" if not unmatched else "incorrect",
                   matched=matched, unmatched=unmatched)


def _judge_general(question: EvalQuestion, text: str) -> Verdict:
    matched = [p.name for p in question.predicate if part_holds(text, p)]
    unmatched = [p.name for p in question.predicate if p.name not in matched]
    core_ok = all(p.name in matched for p in question.predicate if p.core)
    if not unmatched:
        label = "correct"
    elif core_ok:
        label = "partially-correct"
    else:
        label = "incorrect"
    return Verdict(question_id=question.question_id, label=label, matched=matched, unmatched=unmatched)


def judge(question: EvalQuestion, trace: ReasoningTrace) -> Verdict:
    """Deterministic. An answer without cited evidence is incorrect regardless of its content."""
    answer = trace.final_answer
    if answer is None or not answer.cited:
        reason = "no-answer" if answer is None else "no-citation"
        return Verdict(question_id=question.question_id, label="incorrect", unmatched=[reason])
    text = answer_body(answer.text)
    if question.suite == "brca":
        verdict = _judge_brca(question, trace, text)
    else:
        verdict = _judge_general(question, text)
    logger.debug(f"Judge: {question.question_id} -> {verdict.label} (unmatched {verdict.unmatched})")
    return verdict
