# tests/test_eval.py - Evaluation runs across the three engine modes

import json

from src.core.trace import verify_trace
from src.models.scenario import QuestionRecord, Verdict
from src.scenario.evaluation import REPORT_JSON, REPORT_TEXT, aggregate, render_report, run_eval


async def test_complete_mode_diagnoses_every_blockage(scenario_config, scenario, tmp_path):
    report = await run_eval("brca", scenario_config, "complete", seed=7)
    assert report.overall.questions == len(scenario.labels)
    assert report.overall.accuracy == 1.0
    assert all(r.termination == "answered" for r in report.records)

    target = scenario_config.report_dir / "brca-complete"
    saved = json.loads((target / REPORT_JSON).read_text())
    assert saved["overall"]["accuracy"] == 1.0
    assert (target / REPORT_TEXT).read_text().startswith("Suite: brca   Mode: complete   Seed: 7")
    for record in report.records[:3]:
        verify_trace(scenario_config.trace_dir / f"{record.session_id}.trace.jsonl")


async def test_declarative_only_needs_more_turns(scenario_config):
    complete = await run_eval("brca", scenario_config, "complete")
    declarative = await run_eval("brca", scenario_config, "declarative-only")
    assert declarative.overall.accuracy == 1.0
    assert declarative.overall.mean_tool_turns >= 1.5 * complete.overall.mean_tool_turns


async def test_table_list_misses_the_protocol_only_stages(scenario_config):
    report = await run_eval("brca", scenario_config, "table-list")
    assert report.overall.accuracy < 1.0
    wrong = {r.question_id for r in report.records if r.verdict.label != "correct"}
    assert wrong
    assert all(r.termination == "answered" for r in report.records)


async def test_general_suite_reports_per_bucket(scenario_config):
    report = await run_eval("general", scenario_config, "complete", report_dir=scenario_config.report_dir / "alt")
    assert set(report.buckets) == {"k0", "k1", "k2", "k3", "k>3"}
    assert sum(a.questions for a in report.buckets.values()) == report.overall.questions
    assert all(r.termination == "answered" for r in report.records)
    assert (scenario_config.report_dir / "alt" / "general-complete" / REPORT_JSON).is_file()


async def test_empty_suite_still_writes_a_report(scenario_config):
    report = await run_eval("brca", scenario_config, "complete", questions=[])
    assert report.overall.questions == 0
    assert report.records == []
    assert "overall" in render_report(report)


def test_aggregate_counts_only_full_credit():
    def record(qid, label, turns):
        return QuestionRecord(question_id=qid, suite="general", node_bucket="k1", termination="answered",
                              verdict=Verdict(question_id=qid, label=label), tool_turns=turns, approx_tokens=100,
                              session_id=qid)

    result = aggregate([record("a", "correct", 2), record("b", "partially-correct", 4), record("c", "incorrect", 6)])
    assert result.accuracy == round(1 / 3, 4)
    assert (result.correct, result.partially_correct, result.incorrect) == (1, 1, 1)
    assert result.mean_tool_turns == 4.0
    assert result.stderr_tool_turns == round(2 / 3 ** 0.5, 4)
