# src/core/builder.py - Hyperedge construction lifecycle: drafting, review queue, approval, trace distillation

import logging
import re
import shutil
import threading
from pathlib import Path
from typing import Any, Iterable, Literal, Optional

import yaml
from langchain_core.messages import HumanMessage, SystemMessage

from ..models.access import Principal
from ..models.engine import ReasoningTrace, Termination
from ..models.ontology import Change, Hyperedge, HyperedgeKind, Lifecycle, ValidationReport
from ..models.review import CrossScopeFlag, DraftOrigin, HyperedgeDraft, ReviewTicket, TicketState
from ..utils.digests import canonical_json, digest_value, digest_file, sha256_text
from ..utils.paths import resolve_inside_root
from .backends import LlmBackend
from .documents import list_documents, read_document, safe_filename, write_document
from .errors import (
    AttachmentRefused, DraftError, HyperedgeConflict, MutationRejected, OntologyValidationError, TicketAlreadyDecided, UnknownEntity,
)
from .ontology import ATTACHMENTS_DIR, REVIEWS_DIR, OntologySnapshot, OntologyStore, mutate, validate
from .rbac import check_approval, check_submission
from .scripting import create_attachment_script

logger = logging.getLogger(__name__)

# --- Configuration ---
PROMPTS_DIR = Path(__file__).resolve().parent.parent / "prompts"
DRAFT_PROMPT = "draft_hyperedge.v1.md"
TICKET_PREFIX = "ticket-"
STAGING_DIR = "staging"
FENCE_PATTERN = re.compile(r"^```[A-Za-z]*\s*\n(.*?)\n```\s*$", re.DOTALL)
CONDITION_PATTERN = re.compile(r"\bif\b", re.IGNORECASE)

Decision = Literal["approve", "reject"]


def slugify(title: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", title.casefold()).strip("_")


def hyperedge_id_for(title: str) -> str:
    return f"hyperedge:{slugify(title)}"


def load_prompt(name: str = DRAFT_PROMPT) -> str:
    return (PROMPTS_DIR / name).read_text(encoding="utf-8")


# --- Review queue ---

class ReviewQueue:
    """Review tickets persisted under <ontology root>/reviews; in memory when no root is bound."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self.lock = threading.RLock()
        self._tickets: dict[str, ReviewTicket] = {}
        if self.root is not None:
            for path in list_documents(self.root / REVIEWS_DIR):
                ticket = ReviewTicket.model_validate(read_document(path))
                self._tickets[ticket.ticket_id] = ticket
            logger.info(f"Review Queue: loaded {len(self._tickets)} tickets from {self.root / REVIEWS_DIR}")

    def _next_id(self) -> str:
        numbers = [int(t[len(TICKET_PREFIX):]) for t in self._tickets if t[len(TICKET_PREFIX):].isdigit()]
        return f"{TICKET_PREFIX}{max(numbers, default=0) + 1:04d}"

    def save(self, ticket: ReviewTicket) -> ReviewTicket:
        with self.lock:
            self._tickets[ticket.ticket_id] = ticket
            if self.root is not None:
                path = self.root / REVIEWS_DIR / f"{safe_filename(ticket.ticket_id)}.yaml"
                write_document(path, ticket.model_dump(mode="json"))
        return ticket

    def create(self, draft: HyperedgeDraft, flags: list[CrossScopeFlag]) -> ReviewTicket:
        with self.lock:
            ticket = ReviewTicket(ticket_id=self._next_id(), draft=draft, cross_scope_flags=flags)
            return self.save(ticket)

    def get(self, ticket_id: str) -> ReviewTicket:
        ticket = self._tickets.get(ticket_id)
        if ticket is None:
            raise UnknownEntity(f"Unknown review ticket '{ticket_id}'")
        return ticket

    def list_tickets(self, state: Optional[TicketState] = None) -> list[ReviewTicket]:
        return [t for _, t in sorted(self._tickets.items()) if state is None or t.state == state]

    def decided_for(self, hyperedge_id: str) -> list[ReviewTicket]:
        return [t for t in self.list_tickets(TicketState.APPROVED) if t.draft.candidate.id == hyperedge_id]

    def pinned_digests(self, hyperedge_id: str) -> dict[str, str]:
        """Digests pinned by the most recent approval of the hyperedge."""
        approvals = self.decided_for(hyperedge_id)
        return dict(approvals[-1].attachment_digests) if approvals else {}

    def staging_dir(self, ticket_id: str) -> Optional[Path]:
        if self.root is None:
            return None
        return self.root / REVIEWS_DIR / STAGING_DIR / safe_filename(ticket_id)

    def stage_scripts(self, ticket_id: str, scripts: dict[str, str]) -> None:
        """Writes a ticket's scripts where reviewers can read them; live attachments stay untouched."""
        staging = self.staging_dir(ticket_id)
        if staging is None or not scripts:
            return
        for relative, script in scripts.items():
            path = resolve_inside_root(staging, relative)
            if path is None:
                raise AttachmentRefused(f"Attachment path '{relative}' escapes the staging area",
                                        {"attachment": relative, "ticket_id": ticket_id})
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(script, encoding="utf-8")
        logger.info(f"Review Queue: staged {len(scripts)} scripts for {ticket_id} under {staging}")

    def discard_staging(self, ticket_id: str) -> None:
        staging = self.staging_dir(ticket_id)
        if staging is not None:
            shutil.rmtree(staging, ignore_errors=True)


# --- Drafting ---

def _catalogue(snapshot: OntologySnapshot) -> tuple[str, str]:
    nodes = "\n".join(f"- {n.id}: {n.name} - {n.description}" for n in snapshot.nodes.values()) or "- (none)"
    hyperedges = "\n".join(
        f"- {h.id}: {h.title}" for h in snapshot.hyperedges.values() if h.lifecycle == Lifecycle.APPROVED
    ) or "- (none)"
    return nodes, hyperedges


def parse_draft_reply(text: str) -> dict[str, Any]:
    body = text.strip()
    fenced = FENCE_PATTERN.match(body)
    if fenced:
        body = fenced.group(1)
    try:
        data = yaml.safe_load(body)
    except yaml.YAMLError as e:
        raise DraftError(f"Backend reply is not a structured document: {e}")
    if not isinstance(data, dict):
        raise DraftError("Backend reply must be a mapping of hyperedge fields")
    return data


def _string_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return [str(v) for v in value]


def build_draft(data: dict[str, Any], kind: HyperedgeKind, scope: str, author: Principal,
                snapshot: OntologySnapshot, origin: DraftOrigin = DraftOrigin.LLM_ASSISTED) -> HyperedgeDraft:
    """Validates backend output against the snapshot, pruning ids that do not exist."""
    title = str(data.get("title") or "").strip()
    if not title:
        raise DraftError("Draft has no title")
    he_id = hyperedge_id_for(title)

    notes = []
    proposed = _string_list(data.get("member_nodes"))
    members = [n for n in proposed if n in snapshot.nodes]
    pruned = sorted(set(proposed) - set(members))
    if pruned:
        notes.append(f"Pruned unknown node ids: {', '.join(pruned)}")
    proposed_related = _string_list(data.get("related_hyperedges"))
    related = [h for h in proposed_related if h in snapshot.hyperedges and h != he_id]
    pruned_related = sorted(set(proposed_related) - set(related))
    if pruned_related:
        notes.append(f"Pruned unknown related hyperedges: {', '.join(pruned_related)}")
    if not members:
        raise DraftError(f"Draft '{title}' references no existing graph node after pruning", {"pruned": pruned})

    attachments: list[str] = []
    scripts: dict[str, str] = {}
    script_body = str(data.get("attachment_script") or "")
    if kind == HyperedgeKind.PROCEDURAL and script_body.strip():
        relative = f"{ATTACHMENTS_DIR}/{safe_filename(he_id)}.py"
        attachments.append(relative)
        scripts[relative] = create_attachment_script(script_body, he_id)

    try:
        candidate = Hyperedge(
            id=he_id,
            title=title,
            aliases=_string_list(data.get("aliases")),
            description=str(data.get("description") or ""),
            kind=kind,
            scope=scope,
            member_nodes=members,
            semantic_details=str(data.get("semantic_details") or ""),
            related_hyperedges=related,
            attachments=attachments,
            lifecycle=Lifecycle.DRAFT,
        )
    except ValueError as e:
        raise DraftError(f"Draft '{title}' is not a valid hyperedge: {e}")
    return HyperedgeDraft(
        candidate=candidate, author=author.principal_id, origin=origin,
        rationale="; ".join(notes), attachment_scripts=scripts,
    )


async def draft_hyperedge(intent: str, kind: HyperedgeKind, scope: str, backend: LlmBackend,
                          author: Principal, snapshot: OntologySnapshot) -> HyperedgeDraft:
    """Asks the backend for a candidate hyperedge. Never writes to the store."""
    nodes, hyperedges = _catalogue(snapshot)
    system = (load_prompt()
              .replace("{{kind}}", kind.value)
              .replace("{{scope}}", scope)
              .replace("{{nodes}}", nodes)
              .replace("{{hyperedges}}", hyperedges))
    session_id = f"draft-{sha256_text(intent)[:12]}"
    logger.info(f"Hyperedge Draft (Session: {session_id}): {kind.value} draft requested by {author.principal_id}")
    reply = await backend.ainvoke([SystemMessage(content=system), HumanMessage(content=intent)], [],
                                  session_id=session_id)
    if reply.is_tool_turn or not reply.text:
        raise DraftError("Backend returned no draft text")
    draft = build_draft(parse_draft_reply(reply.text), kind, scope, author, snapshot)
    if draft.rationale:
        logger.warning(f"Hyperedge Draft (Session: {session_id}): {draft.rationale}")
    return draft


# --- Submission and review ---

def validate_candidate(snapshot: OntologySnapshot, candidate: Hyperedge) -> ValidationReport:
    """Validates the snapshot as it would look with the candidate in place."""
    hyperedges = dict(snapshot.hyperedges)
    hyperedges[candidate.id] = candidate
    trial = OntologySnapshot.build(snapshot.version, snapshot.sources, dict(snapshot.nodes), dict(snapshot.edges),
                                   hyperedges, root=snapshot.root)
    return validate(OntologyStore(trial))


def cross_scope_flags(snapshot: OntologySnapshot, candidate: Hyperedge) -> list[CrossScopeFlag]:
    flags = []
    for related_id in candidate.related_hyperedges:
        other = snapshot.hyperedges.get(related_id)
        if other is not None and other.scope != candidate.scope:
            flags.append(CrossScopeFlag(hyperedge_id=related_id, scope=other.scope))
    return flags


def _update_target(snapshot: OntologySnapshot, draft: HyperedgeDraft) -> Optional[Hyperedge]:
    """The published hyperedge an explicit update replaces. Any other id or title reuse is a conflict."""
    candidate = draft.candidate
    forms = {form.casefold() for form in candidate.surface_forms()}
    for other in snapshot.hyperedges.values():
        if other.id != candidate.id and forms & {form.casefold() for form in other.surface_forms()}:
            raise HyperedgeConflict(f"Title or alias of {candidate.id} is already used by {other.id}",
                                    {"hyperedge_id": candidate.id, "conflicts_with": other.id})
    existing = snapshot.hyperedges.get(candidate.id)
    if draft.updates is not None and draft.updates != candidate.id:
        raise HyperedgeConflict(f"Draft {candidate.id} cannot update a different hyperedge '{draft.updates}'",
                                {"hyperedge_id": candidate.id, "updates": draft.updates})
    if existing is None:
        if draft.updates is not None:
            raise UnknownEntity(f"Draft updates '{draft.updates}', which is not published")
        return None
    if draft.updates is None:
        raise HyperedgeConflict(
            f"{candidate.id} already exists with scope {existing.scope}; resubmit it as an explicit update",
            {"hyperedge_id": candidate.id, "scope": existing.scope},
        )
    return existing


def _check_relative_scripts(draft: HyperedgeDraft) -> None:
    for relative in draft.attachment_scripts:
        if Path(relative).is_absolute() or ".." in Path(relative).parts:
            raise AttachmentRefused(f"Attachment path '{relative}' escapes the ontology root",
                                    {"attachment": relative})


def submit_for_review(draft: HyperedgeDraft, author: Principal, queue: ReviewQueue,
                      snapshot: OntologySnapshot) -> ReviewTicket:
    """Opens a pending ticket. Tenant isolation is enforced here; the store is not touched."""
    candidate = draft.candidate
    check_submission(author, candidate)
    target = _update_target(snapshot, draft)
    if target is not None:
        check_submission(author, target)
    _check_relative_scripts(draft)
    report = validate_candidate(snapshot, candidate)
    if not report.ok:
        named = "; ".join(f"{v.entity_id}: {v.message}" for v in report.errors()[:5])
        raise OntologyValidationError(f"Draft {candidate.id} is invalid: {named}", report)

    pending = draft.model_copy(update={
        "candidate": candidate.model_copy(update={"lifecycle": Lifecycle.PENDING_REVIEW}),
    })
    flags = cross_scope_flags(snapshot, candidate)
    ticket = queue.create(pending, flags)
    queue.stage_scripts(ticket.ticket_id, draft.attachment_scripts)
    logger.info(f"Review Submission: {ticket.ticket_id} for {candidate.id} by {author.principal_id} "
                f"({len(flags)} cross-scope flags)")
    return ticket


def check_review_authority(reviewer: Principal, ticket: ReviewTicket, snapshot: OntologySnapshot) -> None:
    """Approving and rejecting need the same role; updates need the stricter of the old and new scope."""
    candidate = ticket.draft.candidate
    check_approval(reviewer, candidate, bool(ticket.cross_scope_flags))
    previous = snapshot.hyperedges.get(candidate.id)
    if previous is not None:
        check_approval(reviewer, previous, False)


Install = tuple[Optional[Path], Optional[Path], str]


def _pin_attachments(queue: ReviewQueue, root: Optional[Path],
                     ticket: ReviewTicket) -> tuple[dict[str, str], list[Install]]:
    """Digests of every attachment plus the staged scripts to move into place."""
    draft = ticket.draft
    staging = queue.staging_dir(ticket.ticket_id)
    digests, installs = {}, []
    for relative in draft.candidate.attachments:
        if relative in draft.attachment_scripts:
            text = draft.attachment_scripts[relative]
            digests[relative] = sha256_text(text)
            staged = resolve_inside_root(staging, relative) if staging is not None else None
            if staged is not None and staged.is_file() and digest_file(staged) != digests[relative]:
                raise AttachmentRefused(f"Staged script '{relative}' changed after submission",
                                        {"attachment": relative, "ticket_id": ticket.ticket_id})
            target = resolve_inside_root(root, relative) if root is not None else None
            installs.append((staged, target, text))
            continue
        path = resolve_inside_root(root, relative) if root is not None else None
        if path is None or not path.is_file():
            raise AttachmentRefused(f"Attachment '{relative}' cannot be pinned: no stored script",
                                    {"attachment": relative})
        digests[relative] = digest_file(path)
    return digests, installs


def _install_attachments(installs: list[Install]) -> None:
    for staged, target, text in installs:
        if target is None:
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        if staged is not None and staged.is_file():
            staged.replace(target)
        else:
            target.write_text(text, encoding="utf-8")
        logger.info(f"Installed attachment script {target}")


def decide_review(queue: ReviewQueue, store: OntologyStore, ticket_id: str, decision: Decision,
                  reviewer: Principal, note: str = "") -> ReviewTicket:
    """
    Approves or rejects a pending ticket. The first decision wins; approval writes
    the hyperedge through the single ontology writer with lifecycle=approved and
    only then moves the ticket's staged scripts into the ontology root.
    """
    with queue.lock:
        ticket = queue.get(ticket_id)
        if ticket.state != TicketState.PENDING:
            raise TicketAlreadyDecided(f"Ticket {ticket_id} was already {ticket.state.value} by {ticket.decided_by}",
                                       {"state": ticket.state.value, "decided_by": ticket.decided_by})
        check_review_authority(reviewer, ticket, store.snapshot)

        if decision == "reject":
            ticket = ticket.model_copy(update={
                "state": TicketState.REJECTED, "decided_by": reviewer.principal_id, "decision_note": note,
            })
            queue.discard_staging(ticket_id)
            logger.info(f"Review Decision: {ticket_id} rejected by {reviewer.principal_id}")
            return queue.save(ticket)

        candidate = ticket.draft.candidate
        target = _update_target(store.snapshot, ticket.draft)
        digests, installs = _pin_attachments(queue, queue.root or store.root, ticket)
        approved = candidate.model_copy(update={"lifecycle": Lifecycle.APPROVED})
        change = Change(op="update" if target is not None else "add", entity="hyperedge", entity_id=candidate.id,
                        payload=approved.model_dump(mode="json"))
        try:
            with store.writer() as handle:
                mutate(store, change, handle)
        except MutationRejected as e:
            queue.save(ticket.model_copy(update={"validation_report": e.report.model_dump(mode="json")}))
            logger.warning(f"Review Decision: {ticket_id} stays pending, ontology rejected the write")
            raise
        _install_attachments(installs)
        queue.discard_staging(ticket_id)

        ticket = ticket.model_copy(update={
            "state": TicketState.APPROVED, "decided_by": reviewer.principal_id, "decision_note": note,
            "attachment_digests": digests, "validation_report": None,
        })
        logger.info(f"Review Decision: {ticket_id} approved by {reviewer.principal_id}; {candidate.id} published")
        return queue.save(ticket)

        candidate = ticket.draft.candidate
        check_approval(reviewer, candidate, bool(ticket.cross_scope_flags))
        digests = _pin_attachments(queue.root or store.root, ticket.draft)
        approved = candidate.model_copy(update={"lifecycle": Lifecycle.APPROVED})
        op = "update" if candidate.id in store.snapshot.hyperedges else "add"
        change = Change(op=op, entity="hyperedge", entity_id=candidate.id, payload=approved.model_dump(mode="json"))
        try:
            with store.writer() as handle:
                mutate(store, change, handle)
        except MutationRejected as e:
            queue.save(ticket.model_copy(update={"validation_report": e.report.model_dump(mode="json")}))
            logger.warning(f"Review Decision: {ticket_id} stays pending, ontology rejected the write")
            raise

        ticket = ticket.model_copy(update={
            "state": TicketState.APPROVED, "decided_by": reviewer.principal_id, "decision_note": note,
            "attachment_digests": digests, "validation_report": None,
        })
        logger.info(f"Review Decision: {ticket_id} approved by {reviewer.principal_id}; {candidate.id} published")
        return queue.save(ticket)


# --- Trace distillation ---

def _collect_strings(value: Any) -> Iterable[str]:
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from _collect_strings(v)
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _collect_strings(v)


def _substitute(value: Any, params: dict[str, str]) -> Any:
    if isinstance(value, str):
        for literal, placeholder in params.items():
            value = value.replace(literal, placeholder)
        return value
    if isinstance(value, dict):
        return {k: _substitute(v, params) for k, v in value.items()}
    if isinstance(value, list):
        return [_substitute(v, params) for v in value]
    return value


def query_parameters(trace: ReasoningTrace) -> dict[str, str]:
    """String argument values lifted verbatim from the question become numbered placeholders."""
    params: dict[str, str] = {}
    for step in trace.steps:
        for call in step.tool_calls:
            for text in _collect_strings(call.arguments):
                if text and text in trace.query and text != trace.query and text not in params:
                    params[text] = f"{{{{query_param_{len(params) + 1}}}}}"
    # longest literals first so overlapping values substitute cleanly
    return dict(sorted(params.items(), key=lambda kv: (-len(kv[0]), kv[1])))


def distill_trace(trace: ReasoningTrace, title: str, scope: str, author: Principal,
                  snapshot: OntologySnapshot) -> HyperedgeDraft:
    """Renders an answered trace's ordered tool plan as a procedural draft."""
    if trace.termination != Termination.ANSWERED:
        raise DraftError(f"Trace {trace.session_id} did not terminate with an answer",
                         {"termination": trace.termination.value if trace.termination else None})
    tool_steps = [step for step in trace.steps if step.tool_calls]
    if not tool_steps:
        raise DraftError(f"Trace {trace.session_id} contains no tool invocation")

    params = query_parameters(trace)
    lines = [f"Question template: {_substitute(trace.query, params)}", "", "Steps:"]
    members: set[str] = set()
    for number, step in enumerate(tool_steps, start=1):
        batched = len(step.tool_calls) > 1
        for offset, call in enumerate(step.tool_calls):
            label = f"{number}{chr(ord('a') + offset)}" if batched else f"{number}"
            lines.append(f"{label}. {call.tool_name} {canonical_json(_substitute(call.arguments, params))}")
            members.update(s for s in _collect_strings(call.arguments) if s in snapshot.nodes)
    for entry in trace.evidence:
        members.update(n for n in entry.node_ids if n in snapshot.nodes)

    conditions: list[str] = []
    for he_id in sorted(trace.loaded_details):
        for raw in trace.loaded_details[he_id].splitlines():
            line = raw.strip().lstrip("-* ").strip()
            if line and CONDITION_PATTERN.search(line) and line not in conditions:
                conditions.append(line)
    if conditions:
        lines += ["", "Branch conditions:", *(f"- {c}" for c in conditions)]
    if params:
        lines += ["", "Parameters:", *(f"- {p}: taken from the question" for p in sorted(params.values()))]

    if not members:
        raise DraftError(f"Trace {trace.session_id} touches no graph node; nothing to distill")
    he_id = hyperedge_id_for(title)
    candidate = Hyperedge(
        id=he_id,
        title=title,
        description=f"Distilled protocol for: {_substitute(trace.query, params)}",
        kind=HyperedgeKind.PROCEDURAL,
        scope=scope,
        member_nodes=sorted(members),
        semantic_details="\n".join(lines) + "\n",
        related_hyperedges=[h for h in sorted(trace.loaded_details) if h in snapshot.hyperedges and h != he_id],
        lifecycle=Lifecycle.DRAFT,
    )
    report = validate_candidate(snapshot, candidate)
    if not report.ok:
        named = "; ".join(f"{v.entity_id}: {v.message}" for v in report.errors()[:5])
        raise DraftError(f"Distilled draft {he_id} is invalid: {named}", {"report": report.model_dump(mode="json")})
    logger.info(f"Trace Distillation (Session: {trace.session_id}): {len(tool_steps)} steps -> {he_id}")
    return HyperedgeDraft(
        candidate=candidate, author=author.principal_id, origin=DraftOrigin.HUMAN,
        rationale=f"Distilled from session {trace.session_id} (digest {digest_value(trace.tool_names())[:12]})",
    )
