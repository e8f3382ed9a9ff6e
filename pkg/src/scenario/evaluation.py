# src/scenario/evaluation.py - Runs a question suite through the engine and aggregates verdicts

import asyncio
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.engine import ReasoningEngine, build_engine, create_backend
from ..models.config import EngineConfig
from ..models.engine import EngineMode, ReasoningTrace, Termination
from ..models.scenario import NODE_BUCKETS, Aggregate, EvalQuestion, EvalReport, QuestionRecord, Suite
from .judge import judge
from .questions import load_questions

logger = logging.getLogger(__name__)

# --- Configuration ---
QUESTIONS_FILE = "questions.yaml"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
DEFAULT_CONCURRENCY = 1


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    data = np.asarray(values, dtype=float)
    stderr = float(data.std(ddof=1) / np.sqrt(len(data))) if len(data) > 1 else 0.0
    return round(float(data.mean()), 4), round(stderr, 4)


def aggregate(records: list[QuestionRecord]) -> Aggregate:
    if not records:
        return Aggregate()
    labels = [r.verdict.label for r in records]
    turns = _mean_stderr([r.tool_turns for r in records])
    tokens = _mean_stderr([r.approx_tokens for r in records])
    return Aggregate(
        questions=len(records),
        accuracy=round(labels.count("correct") / len(records), 4),
        correct=labels.count("correct"),
        partially_correct=labels.count("partially-correct"),
        incorrect=labels.count("incorrect"),
        mean_tool_turns=turns[0], stderr_tool_turns=turns[1],
        mean_tokens=tokens[0], stderr_tokens=tokens[1],
    )


def record_for(question: EvalQuestion, trace: ReasoningTrace) -> QuestionRecord:
    return QuestionRecord(
        question_id=question.question_id,
        suite=question.suite,
        node_bucket=question.node_bucket,
        verdict=judge(question, trace),
        termination=trace.termination.value if trace.termination else Termination.FAILED.value,
        tool_turns=trace.tool_turns,
        approx_tokens=trace.approx_tokens_total,
        session_id=trace.session_id,
        failure=trace.failure,
    )


def build_report(suite: Suite, mode: EngineMode, seed: int, records: list[QuestionRecord]) -> EvalReport:
    buckets = {}
    if suite == "general":
        for bucket in NODE_BUCKETS:
            members = [r for r in records if r.node_bucket == bucket]
            if members:
                buckets[bucket] = aggregate(members)
    return EvalReport(suite=suite, mode=mode, seed=seed, records=records, overall=aggregate(records), buckets=buckets)


def render_report(report: EvalReport) -> str:
    """Plain-text table: one overall row, then one row per node bucket."""
    def row(name: str, a: Aggregate) -> str:
        return (f"{name:<10} {a.questions:>4} {a.accuracy:>8.3f} {a.partially_correct:>8} "
                f"{a.mean_tool_turns:>7.2f} ± {a.stderr_tool_turns:<6.2f} {a.mean_tokens:>9.1f} ± {a.stderr_tokens:<8.1f}")

    lines = [
        f"Suite: {report.suite}   Mode: {report.mode}   Seed: {report.seed}",
        f"{'Group':<10} {'N':>4} {'Accuracy':>8} {'Partial':>8} {'Tool turns':>16} {'Tokens':>20}",
        row("overall", report.overall),
    ]
    for bucket, agg in report.buckets.items():
        lines.append(row(bucket, agg))
    failed = [r.question_id for r in report.records if r.termination == Termination.FAILED.value]
    if failed:
        lines.append(f"Failed sessions: {', '.join(failed)}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, directory: Path) -> tuple[Path, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    json_path, text_path = directory / REPORT_JSON, directory / REPORT_TEXT
    json_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text_path.write_text(render_report(report), encoding="utf-8")
    return json_path, text_path


def eval_session_id(question: EvalQuestion, mode: EngineMode) -> str:
    return f"eval-{mode}-{question.question_id}"


async def run_questions(engine: ReasoningEngine, questions: list[EvalQuestion], mode: EngineMode,
                        concurrency: int = DEFAULT_CONCURRENCY) -> list[QuestionRecord]:
    """Sessions run concurrently up to the limit; records come back in question order."""
    gate = asyncio.Semaphore(max(concurrency, 1))

    async def one(question: EvalQuestion) -> QuestionRecord:
        async with gate:
            trace = await engine.run_query(question.text, mode=mode, session_id=eval_session_id(question, mode))
        record = record_for(question, trace)
        logger.info(f"Eval Run: {question.question_id} -> {record.verdict.label} "
                    f"({record.tool_turns} turns, {record.termination})")
        return record

    return list(await asyncio.gather(*(one(q) for q in questions)))


async def run_eval(suite: Suite, config: EngineConfig, mode: EngineMode, *,
                   questions: Optional[list[EvalQuestion]] = None, seed: int = 0,
                   report_dir: Optional[Path] = None, concurrency: int = DEFAULT_CONCURRENCY) -> EvalReport:
    """
    Runs every question of the suite under the given mode and writes report.json and
    report.txt under <report_dir>/<suite>-<mode>/. Questions default to the scenario's question file.
    """
    if questions is None:
        questions = load_questions(Path(config.scenario_dir) / QUESTIONS_FILE)
    selected = [q for q in questions if q.suite == suite]
    records: list[QuestionRecord] = []
    if selected:
        engine = build_engine(config, backend=create_backend(config, mode))
        try:
            records = await run_questions(engine, selected, mode, concurrency)
        finally:
            engine.substrate.close()
    report = build_report(suite, mode, seed, records)
    target = Path(report_dir or config.report_dir) / f"{suite}-{mode}"
    write_report(report, target)
    logger.info(f"Eval Run: {suite}/{mode} accuracy {report.overall.accuracy:.3f} over {len(records)} questions "
                f"-> {target}")
    return report
