# tests/test_scenario.py - Synthetic scenario generation, question sets and the rule-based judge

import dataclasses
import sqlite3

import pytest

from src.core.documents import read_document
from src.core.errors import QuestionCountError, ScenarioConfigError
from src.core.ontology import load_ontology, validate
from src.models.engine import EvidenceEntry, FinalAnswer, ReasoningTrace, Termination
from src.models.scenario import (
    BLOCKING_STAGE,
    AnomalyKind,
    BlockageKind,
    BlockageLabel,
    EvalQuestion,
    PredicatePart,
    ScenarioConfig,
)
from src.scenario.generator import LABELS_FILE, QUESTIONS_FILE, generate_scenario, verify_injection
from src.scenario.judge import answer_body, judge, mentions
from src.scenario.ontology_fixture import PROCEDURAL_ID
from src.scenario.questions import generate_questions, load_questions

SMALL = dict(contracts=12, blockage_quota={k: 1 for k in BlockageKind})


def dump(path) -> list[str]:
    connection = sqlite3.connect(path)
    try:
        return list(connection.iterdump())
    finally:
        connection.close()


# --- Generation ---

def test_every_blockage_kind_is_injected(scenario):
    kinds = sorted(label.kind for label in scenario.labels)
    assert kinds == sorted(k for k in BlockageKind for _ in range(4))
    for label in scenario.labels:
        assert label.blocking_stage == BLOCKING_STAGE[label.kind]
        assert label.contract_id in scenario.contracts


def test_generated_ontology_validates(scenario):
    store = load_ontology(scenario.ontology_root)
    assert validate(store).ok
    assert PROCEDURAL_ID in store.snapshot.hyperedges
    assert set(scenario.sources) == {"BPM", "ERP", "SRM", "WMS"}


def test_default_scenario_draws_every_anomaly(scenario):
    labels = read_document(scenario.root / LABELS_FILE)
    assert labels["anomalies"] == sorted(k.value for k in AnomalyKind)
    assert labels["seed"] == 7


def test_generation_is_deterministic(tmp_path):
    config = ScenarioConfig(seed=11, **SMALL)
    first = generate_scenario(config, tmp_path / "a")
    second = generate_scenario(config, tmp_path / "b")
    for system in first.sources:
        assert dump(first.sources[system]) == dump(second.sources[system])
    for name in (LABELS_FILE, QUESTIONS_FILE):
        assert (first.root / name).read_bytes() == (second.root / name).read_bytes()


def test_different_seeds_differ(tmp_path):
    first = generate_scenario(ScenarioConfig(seed=1, **SMALL), tmp_path)
    second = generate_scenario(ScenarioConfig(seed=2, **SMALL), tmp_path)
    assert dump(first.sources["ERP"]) != dump(second.sources["ERP"])


def test_clean_layout_without_anomalies(tmp_path):
    config = ScenarioConfig(seed=5, anomaly_mix={k: 0.0 for k in AnomalyKind}, **SMALL)
    scenario = generate_scenario(config, tmp_path)
    assert scenario.layout.anomalies == frozenset()
    assert scenario.layout.erp_contract_field == "contract_no"
    assert not scenario.layout.pad_material


def test_mislabeled_scenario_fails_verification(scenario):
    shifted = dataclasses.replace(scenario, labels=scenario.labels[1:])
    with pytest.raises(ScenarioConfigError) as exc:
        verify_injection(shifted)
    assert exc.value.detail["contract"] == scenario.labels[0].contract_id


@pytest.mark.parametrize("overrides", [
    {"table_plan": ["table:bpm_contract"]},
    {"table_plan": ["table:bpm_contract", "table:erp_sales_order", "table:erp_imaginary"]},
    {"table_plan": ["table:bpm_contract", "table:erp_sales_order"]},
])
def test_inconsistent_table_plan(tmp_path, overrides):
    with pytest.raises(ScenarioConfigError):
        generate_scenario(ScenarioConfig(**overrides), tmp_path)


@pytest.mark.parametrize("bad", [
    {"blockage_mix": {BlockageKind.ERP_SYNC_GAP: 1.5}},
    {"contracts": 3, "blockage_quota": {BlockageKind.ERP_SYNC_GAP: 4}},
    {"blockage_quota": {BlockageKind.ERP_SYNC_GAP: -1}},
])
def test_invalid_config_values(bad):
    with pytest.raises(ValueError):
        ScenarioConfig(**bad)


# --- Questions ---

def test_saved_questions_cover_both_suites(scenario):
    questions = load_questions(scenario.root / QUESTIONS_FILE)
    brca = [q for q in questions if q.suite == "brca"]
    general = [q for q in questions if q.suite == "general"]
    assert len(brca) == len(scenario.labels)
    assert {q.node_bucket for q in general} == {"k0", "k1", "k2", "k3", "k>3"}
    assert all(sum(q.node_bucket == b for q in general) <= 8 for b in ("k0", "k1", "k2", "k3", "k>3"))
    assert len({q.question_id for q in questions}) == len(questions)


def test_too_many_brca_questions(scenario):
    with pytest.raises(QuestionCountError) as exc:
        generate_questions(scenario, brca_count=len(scenario.labels) + 1)
    assert exc.value.detail["available"] == len(scenario.labels)


def test_too_many_bucket_questions(scenario):
    with pytest.raises(QuestionCountError) as exc:
        generate_questions(scenario, bucket_counts={"k1": 10_000})
    assert exc.value.detail["bucket"] == "k1"


def test_explicit_counts(scenario):
    questions = generate_questions(scenario, brca_count=2, bucket_counts={"k2": 1})
    assert [(q.suite, q.node_bucket) for q in questions] == [("brca", None), ("brca", None), ("general", "k2")]


# --- Judge ---

LABEL = BlockageLabel(contract_id="HT-0003", kind=BlockageKind.ERP_SYNC_GAP,
                      blocking_stage="table:erp_material_document", explanation="")
BRCA = EvalQuestion(question_id="brca-001", text="Why has contract HT-0003 not completed fulfillment?", suite="brca",
                    label=LABEL)


def answered(text: str, cited: list[str], stage_nodes: list[str]) -> ReasoningTrace:
    evidence = [EvidenceEntry(evidence_id="s-e001", call_id="c:0", tool_name="data_topology_query",
                              node_ids=stage_nodes)]
    return ReasoningTrace(session_id="s", query=BRCA.text, evidence=evidence, termination=Termination.ANSWERED,
                          final_answer=FinalAnswer(text=text, cited=cited), tool_turns=1)


def test_brca_answer_with_stage_evidence_is_correct():
    text = "Blockage: erp-sync-gap\nBlocking stage: table:erp_material_document\n\nEvidence: [[s-e001]]"
    verdict = judge(BRCA, answered(text, ["s-e001"], ["table:erp_material_document"]))
    assert verdict.label == "correct"
    assert verdict.matched == ["kind", "blocking-stage", "stage-evidence"]


def test_brca_answer_needs_evidence_touching_the_stage():
    text = "Blockage: erp-sync-gap\nBlocking stage: table:erp_material_document\n\nEvidence: [[s-e001]]"
    verdict = judge(BRCA, answered(text, ["s-e001"], ["table:bpm_contract"]))
    assert verdict.label == "incorrect"
    assert verdict.unmatched == ["stage-evidence"]


def test_brca_answer_naming_two_kinds_is_incorrect():
    text = "Either erp-sync-gap or site-receipt-missing at table:erp_material_document [[s-e001]]"
    verdict = judge(BRCA, answered(text, ["s-e001"], ["table:erp_material_document"]))
    assert "kind" in verdict.unmatched


def test_uncited_answer_is_incorrect():
    verdict = judge(BRCA, answered("erp-sync-gap at table:erp_material_document", [], []))
    assert verdict.label == "incorrect"
    assert verdict.unmatched == ["no-citation"]
    unanswered = ReasoningTrace(session_id="s", query=BRCA.text, termination=Termination.FAILED)
    assert judge(BRCA, unanswered).unmatched == ["no-answer"]


def test_general_partial_credit():
    question = EvalQuestion(question_id="general-k1-001", text="Top customers?", suite="general", node_bucket="k1",
                            predicate=[PredicatePart(name="customers", expected=["C001", "C002"]),
                                       PredicatePart(name="counts", expected=["7"], core=False)])
    full = ReasoningTrace(session_id="s", query=question.text,
                          final_answer=FinalAnswer(text="C001 (7), C002 (5) [[s-e001]]", cited=["s-e001"]))
    partial = full.model_copy(update={"final_answer": FinalAnswer(text="C002 and C001 [[s-e001]]", cited=["s-e001"])})
    wrong = full.model_copy(update={"final_answer": FinalAnswer(text="C001 only (7) [[s-e001]]", cited=["s-e001"])})
    assert judge(question, full).label == "correct"
    assert judge(question, partial).label == "partially-correct"
    assert judge(question, wrong).label == "incorrect"


def test_mentions_is_whole_token():
    assert mentions("Stored in ERP.", "erp")
    assert not mentions("see table:erp_sales_order", "ERP")
    assert answer_body("SAP [[s-e001]]\n\nEvidence: [[s-e001]]").strip() == "SAP"
