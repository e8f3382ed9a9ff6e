# tests/test_builder.py - Drafting, review governance, role checks and trace distillation

import itertools

import pytest

from src.core.builder import (
    ReviewQueue,
    build_draft,
    decide_review,
    distill_trace,
    draft_hyperedge,
    hyperedge_id_for,
    parse_draft_reply,
    submit_for_review,
)
from src.core.errors import (
    AttachmentRefused,
    DraftError,
    InsufficientRole,
    OntologyValidationError,
    HyperedgeConflict,
    TenantIsolationError,
    TicketAlreadyDecided,
    UnknownEntity,
)
from src.core.rbac import check_approval, required_approval_role
from src.models.access import Principal
from src.models.engine import BackendReply, FinalAnswer, ReasoningTrace, Termination, ToolCall, TraceStep
from src.models.ontology import Hyperedge, HyperedgeKind, Lifecycle
from src.models.review import HyperedgeDraft, TicketState
from src.utils.digests import digest_file
from tests.conftest import CUSTOMER, PURCHASE_ORDER, RECEIPT, SALES_ORDER

ROOT = Principal(principal_id="root", roles=frozenset({"root"}))
NORTH_ADMIN = Principal(principal_id="n-admin", roles=frozenset({"tenant-admin"}), tenant="north")
SOUTH_ADMIN = Principal(principal_id="s-admin", roles=frozenset({"tenant-admin"}), tenant="south")
NORTH_ANALYST = Principal(principal_id="n-analyst", roles=frozenset({"analyst"}), tenant="north")
SOUTH_ANALYST = Principal(principal_id="s-analyst", roles=frozenset({"analyst"}), tenant="south")


class ReplyBackend:
    def __init__(self, text: str):
        self.text = text
        self.seen = []

    async def ainvoke(self, messages, tools, session_id="default"):
        self.seen.append(messages)
        return BackendReply(text=self.text)


def draft(title="Late Shipments", scope="tenant:north", members=(SALES_ORDER,), related=()) -> HyperedgeDraft:
    candidate = Hyperedge(id=hyperedge_id_for(title), title=title, scope=scope, member_nodes=list(members),
                          related_hyperedges=list(related))
    return HyperedgeDraft(candidate=candidate, author="n-analyst")


# --- Role matrix ---

@pytest.mark.parametrize("reviewer, scope, cross", list(itertools.product(
    [ROOT, NORTH_ADMIN, SOUTH_ADMIN, NORTH_ANALYST], ["global", "tenant:north", "tenant:south"], [False, True])))
def test_approval_matrix(reviewer, scope, cross):
    he = Hyperedge(id="hyperedge:x", title="X", scope=scope, member_nodes=[CUSTOMER])
    allowed = reviewer is ROOT or (
        reviewer.has_role("tenant-admin") and not cross and scope == f"tenant:{reviewer.tenant}")
    if allowed:
        check_approval(reviewer, he, cross)
    else:
        with pytest.raises(InsufficientRole) as exc:
            check_approval(reviewer, he, cross)
        assert exc.value.missing_role == required_approval_role(he, cross)


def test_required_role_names_the_tenant():
    he = Hyperedge(id="hyperedge:x", title="X", scope="tenant:north", member_nodes=[CUSTOMER])
    assert required_approval_role(he, False) == "tenant-admin:north"
    assert required_approval_role(he, True) == "root"


# --- Ticket lifecycle ---

def test_submit_then_approve_publishes(mini_store):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    assert ticket.ticket_id == "ticket-0001"
    assert ticket.state == TicketState.PENDING
    assert ticket.draft.candidate.lifecycle == Lifecycle.PENDING_REVIEW
    assert "hyperedge:late_shipments" not in mini_store.snapshot.hyperedges

    decided = decide_review(queue, mini_store, ticket.ticket_id, "approve", NORTH_ADMIN, note="fine")
    assert decided.state == TicketState.APPROVED
    assert decided.decided_by == "n-admin"
    assert mini_store.snapshot.hyperedges["hyperedge:late_shipments"].lifecycle == Lifecycle.APPROVED


def test_first_decision_wins(mini_store):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    decide_review(queue, mini_store, ticket.ticket_id, "reject", NORTH_ADMIN, note="duplicate")
    with pytest.raises(TicketAlreadyDecided):
        decide_review(queue, mini_store, ticket.ticket_id, "approve", ROOT)
    assert "hyperedge:late_shipments" not in mini_store.snapshot.hyperedges
    assert queue.get(ticket.ticket_id).decision_note == "duplicate"


def test_wrong_tenant_admin_cannot_approve(mini_store):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    with pytest.raises(InsufficientRole):
        decide_review(queue, mini_store, ticket.ticket_id, "approve", SOUTH_ADMIN)
    assert queue.get(ticket.ticket_id).state == TicketState.PENDING


def test_cross_scope_reference_needs_root(mini_store):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(related=["hyperedge:order_book"]), NORTH_ANALYST, queue, mini_store.snapshot)
    assert [f.hyperedge_id for f in ticket.cross_scope_flags] == ["hyperedge:order_book"]
    with pytest.raises(InsufficientRole) as exc:
        decide_review(queue, mini_store, ticket.ticket_id, "approve", NORTH_ADMIN)
    assert exc.value.missing_role == "root"
    decide_review(queue, mini_store, ticket.ticket_id, "approve", ROOT)


def test_tenant_isolation_on_submit(mini_store):
    south_analyst = Principal(principal_id="s", roles=frozenset({"analyst"}), tenant="south")
    with pytest.raises(TenantIsolationError):
        submit_for_review(draft(), south_analyst, ReviewQueue(), mini_store.snapshot)


def test_invalid_draft_is_not_queued(mini_store):
    queue = ReviewQueue()
    with pytest.raises(OntologyValidationError):
        submit_for_review(draft(scope="global", members=("table:ghost",)), ROOT, queue, mini_store.snapshot)
    assert queue.list_tickets() == []


def test_unknown_ticket(mini_store):
    with pytest.raises(UnknownEntity):
        decide_review(ReviewQueue(), mini_store, "ticket-0042", "approve", ROOT)


def test_queue_persists_tickets(mini_store, tmp_path):
    queue = ReviewQueue(tmp_path)
    submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    submit_for_review(draft(title="Backorders"), NORTH_ANALYST, queue, mini_store.snapshot)
    reloaded = ReviewQueue(tmp_path)
    assert [t.ticket_id for t in reloaded.list_tickets(TicketState.PENDING)] == ["ticket-0001", "ticket-0002"]


def test_procedural_attachment_is_pinned_on_approval(mini_store, tmp_path):
    data = {"title": "Receipt Audit", "member_nodes": [RECEIPT], "semantic_details": "Run the attachment.",
            "attachment_script": "findings['count'] = len(args)"}
    procedural = build_draft(data, HyperedgeKind.PROCEDURAL, "global", ROOT, mini_store.snapshot)
    relative = "attachments/hyperedge_receipt_audit.py"
    assert procedural.candidate.attachments == [relative]
    queue = ReviewQueue(tmp_path)
    ticket = submit_for_review(procedural, ROOT, queue, mini_store.snapshot)
    staged = queue.staging_dir(ticket.ticket_id) / relative
    assert staged.is_file()
    assert not (tmp_path / relative).exists()
    decided = decide_review(queue, mini_store, ticket.ticket_id, "approve", ROOT)
    assert decided.attachment_digests == {relative: digest_file(tmp_path / relative)}
    assert queue.pinned_digests("hyperedge:receipt_audit") == decided.attachment_digests
    assert not queue.staging_dir(ticket.ticket_id).exists()


def receipt_audit_update(mini_store, body: str) -> HyperedgeDraft:
    data = {"title": "Receipt Audit", "member_nodes": [RECEIPT], "semantic_details": "Run the attachment.",
            "attachment_script": body}
    procedural = build_draft(data, HyperedgeKind.PROCEDURAL, "global", ROOT, mini_store.snapshot)
    return procedural.model_copy(update={"updates": procedural.candidate.id})


def test_pending_resubmission_leaves_live_attachment_alone(mini_store, tmp_path):
    data = {"title": "Receipt Audit", "member_nodes": [RECEIPT], "semantic_details": "Run the attachment.",
            "attachment_script": "findings['count'] = len(args)"}
    queue = ReviewQueue(tmp_path)
    first = submit_for_review(build_draft(data, HyperedgeKind.PROCEDURAL, "global", ROOT, mini_store.snapshot),
                              ROOT, queue, mini_store.snapshot)
    approved = decide_review(queue, mini_store, first.ticket_id, "approve", ROOT)
    live = tmp_path / "attachments/hyperedge_receipt_audit.py"
    before = live.read_text(encoding="utf-8")

    second = submit_for_review(receipt_audit_update(mini_store, "findings['count'] = -1"), ROOT, queue,
                               mini_store.snapshot)
    assert live.read_text(encoding="utf-8") == before
    assert queue.pinned_digests("hyperedge:receipt_audit") == approved.attachment_digests

    decide_review(queue, mini_store, second.ticket_id, "reject", ROOT, note="no")
    assert live.read_text(encoding="utf-8") == before
    assert not queue.staging_dir(second.ticket_id).exists()


def test_tampered_staged_script_is_refused(mini_store, tmp_path):
    data = {"title": "Receipt Audit", "member_nodes": [RECEIPT], "semantic_details": "Run the attachment.",
            "attachment_script": "findings['count'] = len(args)"}
    queue = ReviewQueue(tmp_path)
    ticket = submit_for_review(build_draft(data, HyperedgeKind.PROCEDURAL, "global", ROOT, mini_store.snapshot),
                               ROOT, queue, mini_store.snapshot)
    staged = queue.staging_dir(ticket.ticket_id) / "attachments/hyperedge_receipt_audit.py"
    staged.write_text("import os\n", encoding="utf-8")
    with pytest.raises(AttachmentRefused):
        decide_review(queue, mini_store, ticket.ticket_id, "approve", ROOT)
    assert queue.get(ticket.ticket_id).state == TicketState.PENDING
    assert "hyperedge:receipt_audit" not in mini_store.snapshot.hyperedges


def test_attachment_path_may_not_leave_the_root(mini_store, tmp_path):
    escaping = draft().model_copy(update={"attachment_scripts": {"../outside.py": "findings = {}"}})
    queue = ReviewQueue(tmp_path)
    with pytest.raises(AttachmentRefused):
        submit_for_review(escaping, NORTH_ANALYST, queue, mini_store.snapshot)
    assert queue.list_tickets() == []
    assert not (tmp_path.parent / "outside.py").exists()


# --- Collisions and updates ---

def test_tenant_draft_cannot_shadow_a_global_hyperedge(mini_store):
    queue = ReviewQueue()
    global_before = mini_store.snapshot.hyperedges["hyperedge:procurement_trace"]
    with pytest.raises(HyperedgeConflict) as exc:
        submit_for_review(draft(title="Procurement Trace"), NORTH_ANALYST, queue, mini_store.snapshot)
    assert exc.value.detail["scope"] == "global"
    assert queue.list_tickets() == []
    assert mini_store.snapshot.hyperedges["hyperedge:procurement_trace"] == global_before


def test_title_reuse_under_another_id_conflicts(mini_store):
    shadow = draft(title="Customer Order Book")
    with pytest.raises(HyperedgeConflict) as exc:
        submit_for_review(shadow, NORTH_ANALYST, ReviewQueue(), mini_store.snapshot)
    assert exc.value.detail["conflicts_with"] == "hyperedge:order_book"


def test_update_of_unknown_hyperedge(mini_store):
    ghost = draft().model_copy(update={"updates": "hyperedge:late_shipments"})
    with pytest.raises(UnknownEntity):
        submit_for_review(ghost, NORTH_ANALYST, ReviewQueue(), mini_store.snapshot)


def test_rescoping_a_global_hyperedge_needs_root(mini_store):
    rescoped = draft(title="Procurement Trace", members=(SALES_ORDER, PURCHASE_ORDER, RECEIPT))
    rescoped = rescoped.model_copy(update={"updates": "hyperedge:procurement_trace"})
    queue = ReviewQueue()
    ticket = submit_for_review(rescoped, NORTH_ANALYST, queue, mini_store.snapshot)
    with pytest.raises(InsufficientRole) as exc:
        decide_review(queue, mini_store, ticket.ticket_id, "approve", NORTH_ADMIN)
    assert exc.value.missing_role == "root"
    assert mini_store.snapshot.hyperedges["hyperedge:procurement_trace"].scope == "global"

    decide_review(queue, mini_store, ticket.ticket_id, "approve", ROOT)
    assert mini_store.snapshot.hyperedges["hyperedge:procurement_trace"].scope == "tenant:north"


def test_tenant_cannot_update_another_tenants_hyperedge(mini_store):
    candidate = Hyperedge(id="hyperedge:tenant_backlog", title="Regional Backlog", scope="tenant:south",
                          member_nodes=[SALES_ORDER])
    takeover = HyperedgeDraft(candidate=candidate, author="s-analyst", updates="hyperedge:tenant_backlog")
    with pytest.raises(TenantIsolationError):
        submit_for_review(takeover, SOUTH_ANALYST, ReviewQueue(), mini_store.snapshot)


# --- Reject authority ---

@pytest.mark.parametrize("reviewer", [SOUTH_ANALYST, SOUTH_ADMIN, NORTH_ANALYST])
def test_reject_needs_the_approval_role(mini_store, reviewer):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    with pytest.raises(InsufficientRole):
        decide_review(queue, mini_store, ticket.ticket_id, "reject", reviewer, note="spam")
    assert queue.get(ticket.ticket_id).state == TicketState.PENDING


def test_reject_by_the_tenant_admin(mini_store):
    queue = ReviewQueue()
    ticket = submit_for_review(draft(), NORTH_ANALYST, queue, mini_store.snapshot)
    decided = decide_review(queue, mini_store, ticket.ticket_id, "reject", NORTH_ADMIN)
    assert decided.state == TicketState.REJECTED


# --- Drafting ---

def test_build_draft_prunes_unknown_ids(mini_store):
    data = {"title": "Order Sourcing", "member_nodes": [SALES_ORDER, "table:made_up"],
            "related_hyperedges": ["hyperedge:procurement_trace", "hyperedge:ghost"]}
    result = build_draft(data, HyperedgeKind.DECLARATIVE, "global", ROOT, mini_store.snapshot)
    assert result.candidate.member_nodes == [SALES_ORDER]
    assert result.candidate.related_hyperedges == ["hyperedge:procurement_trace"]
    assert "table:made_up" in result.rationale and "hyperedge:ghost" in result.rationale


def test_build_draft_needs_members(mini_store):
    with pytest.raises(DraftError):
        build_draft({"title": "Empty", "member_nodes": ["table:nope"]}, HyperedgeKind.DECLARATIVE, "global", ROOT,
                    mini_store.snapshot)
    with pytest.raises(DraftError):
        build_draft({"member_nodes": [CUSTOMER]}, HyperedgeKind.DECLARATIVE, "global", ROOT, mini_store.snapshot)


def test_parse_draft_reply_accepts_fences():
    assert parse_draft_reply("```yaml\ntitle: A\n```") == {"title": "A"}
    with pytest.raises(DraftError):
        parse_draft_reply("just prose")


async def test_draft_hyperedge_uses_backend_reply(mini_store):
    backend = ReplyBackend(f"title: Supplier Mix\nmember_nodes:\n  - {PURCHASE_ORDER}\ndescription: Suppliers per order")
    result = await draft_hyperedge("group suppliers by order", HyperedgeKind.DECLARATIVE, "global", backend, ROOT,
                                   mini_store.snapshot)
    assert result.candidate.id == "hyperedge:supplier_mix"
    assert result.candidate.lifecycle == Lifecycle.DRAFT
    assert "hyperedge:supplier_mix" not in mini_store.snapshot.hyperedges
    system_prompt = backend.seen[0][0].content
    assert PURCHASE_ORDER in system_prompt


# --- Distillation ---

def answered_trace() -> ReasoningTrace:
    call = ToolCall(call_id="s:0", tool_name="data_topology_query", arguments={
        "node_subset": [SALES_ORDER, PURCHASE_ORDER],
        "constraints": [{"node_id": SALES_ORDER, "field": "so_no", "value": "SO-0001"}],
    })
    details = ToolCall(call_id="s:1", tool_name="hyperedge_read_details",
                       arguments={"hyperedge_id": "hyperedge:procurement_trace"})
    return ReasoningTrace(
        session_id="s-1", query="Which suppliers source sales order SO-0001?",
        steps=[TraceStep(index=0, message_digest="a", kind="tool", tool_calls=[details]),
               TraceStep(index=1, message_digest="b", kind="tool", tool_calls=[call]),
               TraceStep(index=2, message_digest="c", kind="answer")],
        loaded_details={"hyperedge:procurement_trace": "- If no receipt exists, check the ASN.\n- Then stop."},
        termination=Termination.ANSWERED, final_answer=FinalAnswer(text="SUP-A and SUP-B", cited=["s-1-e001"]),
        tool_turns=2,
    )


def test_distill_trace_parameterizes_the_question(mini_store):
    result = distill_trace(answered_trace(), "Order Suppliers", "global", ROOT, mini_store.snapshot)
    he = result.candidate
    assert he.kind == HyperedgeKind.PROCEDURAL
    assert he.member_nodes == [SALES_ORDER, PURCHASE_ORDER]
    assert "SO-0001" not in he.semantic_details
    assert "{{query_param_1}}" in he.semantic_details
    assert "If no receipt exists, check the ASN." in he.semantic_details
    assert he.semantic_details.index("1. hyperedge_read_details") < he.semantic_details.index(
        "2. data_topology_query")
    assert he.related_hyperedges == ["hyperedge:procurement_trace"]


def test_distill_requires_an_answer(mini_store):
    trace = answered_trace().model_copy(update={"termination": Termination.BUDGET_EXHAUSTED})
    with pytest.raises(DraftError):
        distill_trace(trace, "Order Suppliers", "global", ROOT, mini_store.snapshot)
