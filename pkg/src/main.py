# src/main.py - Command-line entry point
# One dispatch per invocation: ontology, hyperedge lifecycle, queries, scenarios, evaluation, traces.

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from dotenv import load_dotenv

from .core.builder import ReviewQueue, decide_review, distill_trace, draft_hyperedge, submit_for_review
from .core.config import LOG_LEVEL_VARIABLE, load_config
from .core.documents import read_document, write_document
from .core.engine import build_engine, create_backend
from .core.errors import OntologyValidationError, ReasonerError, UnknownEntity
from .core.ontology import auto_instantiate_declaratives, load_ontology, validate
from .core.trace import load_trace, rebuild_trace, trace_path, verify_trace
from .models.access import Principal
from .models.config import EngineConfig
from .models.engine import Termination
from .models.ontology import HyperedgeKind
from .models.review import DraftOrigin, HyperedgeDraft, ReviewTicket, TicketState
from .models.scenario import ScenarioConfig
from .scenario.evaluation import render_report, run_eval
from .scenario.generator import LABELS_FILE, generate_scenario

# --- Configuration ---
MODES = ("complete", "declarative-only", "table-list")
SUITES = ("brca", "general")
EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2
DEFAULT_LOG_LEVEL = "WARNING"

logger = logging.getLogger(__name__)

Outcome = tuple[Any, str]


# --- Output ---

def emit(outcome: Outcome, fmt: str) -> None:
    payload, text = outcome
    if fmt == "machine":
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    elif text:
        print(text)


def _principal(config: EngineConfig, args: argparse.Namespace) -> Principal:
    """The configured principal, with --as/--role/--tenant taking precedence."""
    base = config.principal.to_principal()
    updates: dict[str, Any] = {}
    if getattr(args, "principal_id", None):
        updates["principal_id"] = args.principal_id
    if getattr(args, "roles", None):
        updates["roles"] = frozenset(args.roles)
    if getattr(args, "tenant", None):
        updates["tenant"] = args.tenant
    return base.model_copy(update=updates)


def _ticket_line(ticket: ReviewTicket) -> str:
    candidate = ticket.draft.candidate
    flags = f" cross-scope: {', '.join(f.hyperedge_id for f in ticket.cross_scope_flags)}" \
        if ticket.cross_scope_flags else ""
    return (f"{ticket.ticket_id}  {ticket.state.value:<8} {candidate.kind.value:<11} {candidate.scope:<10} "
            f"{candidate.id}  by {ticket.draft.author}{flags}")


# --- ontology ---

def cmd_ontology_validate(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    store = load_ontology(config.ontology_root)
    report = validate(store)
    payload = report.model_dump(mode="json")
    if not report.ok:
        named = "; ".join(f"{v.entity_id}: {v.message} [{v.rule}]" for v in report.errors())
        raise OntologyValidationError(f"Ontology at {config.ontology_root} is invalid: {named}", report)
    lines = ["ok"] + [f"warning: {v.entity_id}: {v.message}" for v in report.warnings()]
    return payload, "\n".join(lines)


def cmd_ontology_auto_instantiate(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    """Drafts one declarative per unbound node and queues each for review."""
    store = load_ontology(config.ontology_root)
    queue = ReviewQueue(store.root)
    author = _principal(config, args)
    tickets = []
    for candidate in auto_instantiate_declaratives(store):
        draft = HyperedgeDraft(candidate=candidate, author=author.principal_id, origin=DraftOrigin.AUTO_INSTANTIATED)
        tickets.append(submit_for_review(draft, author, queue, store.snapshot))
    payload = {"tickets": [t.ticket_id for t in tickets]}
    text = "\n".join(_ticket_line(t) for t in tickets) or "No unbound nodes; nothing drafted."
    return payload, text


# --- hyperedge ---

def cmd_hyperedge_draft(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    store = load_ontology(config.ontology_root)
    author = _principal(config, args)
    if args.from_trace:
        records = load_trace(trace_path(config.trace_dir, args.from_trace))
        verify_trace(records)
        title = args.title or args.intent
        if not title:
            raise ReasonerError("Distilling a trace needs --title")
        draft = distill_trace(rebuild_trace(records), title, args.scope, author, store.snapshot)
    else:
        if not args.intent:
            raise ReasonerError("Drafting needs an intent text or --from-trace")
        draft = asyncio.run(draft_hyperedge(args.intent, HyperedgeKind(args.kind), args.scope,
                                            create_backend(config), author, store.snapshot))
    if args.update:
        draft = draft.model_copy(update={"updates": draft.candidate.id})
    out = Path(args.out)
    write_document(out, draft.model_dump(mode="json"))
    candidate = draft.candidate
    text = f"Draft {candidate.id} ({candidate.kind.value}, scope {candidate.scope}) written to {out}"
    if draft.rationale:
        text += f"\nNotes: {draft.rationale}"
    return {"hyperedge_id": candidate.id, "path": str(out), "rationale": draft.rationale}, text


def cmd_hyperedge_submit(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    store = load_ontology(config.ontology_root)
    draft = HyperedgeDraft.model_validate(read_document(Path(args.draft)))
    ticket = submit_for_review(draft, _principal(config, args), ReviewQueue(store.root), store.snapshot)
    return ticket.model_dump(mode="json"), f"Submitted: {_ticket_line(ticket)}"


def _decide(config: EngineConfig, args: argparse.Namespace, decision: str) -> Outcome:
    store = load_ontology(config.ontology_root)
    queue = ReviewQueue(store.root)
    ticket = decide_review(queue, store, args.ticket_id, decision, _principal(config, args), note=args.note)
    return ticket.model_dump(mode="json"), _ticket_line(ticket)


def cmd_review_approve(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    return _decide(config, args, "approve")


def cmd_review_reject(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    return _decide(config, args, "reject")


def _prompt_decisions(config: EngineConfig, args: argparse.Namespace, queue: ReviewQueue,
                      tickets: list[ReviewTicket]) -> list[ReviewTicket]:
    """Terminal flow: one prompt per pending ticket; a=approve, r=reject, anything else skips."""
    store = load_ontology(config.ontology_root)
    reviewer = _principal(config, args)
    decided = []
    for ticket in tickets:
        candidate = ticket.draft.candidate
        print(_ticket_line(ticket))
        print(f"  {candidate.title}: {candidate.description}")
        print(f"  members: {', '.join(candidate.member_nodes)}")
        answer = input("  [a]pprove / [r]eject / [s]kip? ").strip().lower()
        if answer[:1] == "a":
            decided.append(decide_review(queue, store, ticket.ticket_id, "approve", reviewer))
        elif answer[:1] == "r":
            decided.append(decide_review(queue, store, ticket.ticket_id, "reject", reviewer,
                                         note=input("  note: ").strip()))
    return decided


def cmd_review_list(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    queue = ReviewQueue(load_ontology(config.ontology_root).root)
    state = TicketState(args.state) if args.state != "all" else None
    tickets = queue.list_tickets(state)
    if args.interactive:
        pending = [t for t in tickets if t.state == TicketState.PENDING]
        tickets = _prompt_decisions(config, args, queue, pending)
    payload = {"tickets": [t.model_dump(mode="json") for t in tickets]}
    return payload, "\n".join(_ticket_line(t) for t in tickets) or "No tickets."


# --- query ---

def cmd_query_run(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    mode = args.mode or config.mode
    engine = build_engine(config, backend=create_backend(config, mode))
    try:
        trace = asyncio.run(engine.run_query(args.text, _principal(config, args), budget=args.budget, mode=mode,
                                             session_id=args.session_id))
    finally:
        engine.substrate.close()
    payload = {
        "session_id": trace.session_id,
        "termination": trace.termination.value if trace.termination else None,
        "answer": trace.final_answer.text if trace.final_answer else None,
        "cited": trace.final_answer.cited if trace.final_answer else [],
        "tool_turns": trace.tool_turns,
        "approx_tokens": trace.approx_tokens_total,
        "trace_path": trace.trace_path,
        "failure": trace.failure,
    }
    if trace.termination == Termination.FAILED:
        failure = trace.failure or {}
        raise ReasonerError(f"Session {trace.session_id} failed: {failure.get('message', 'unknown error')}",
                            payload)
    lines = [
        trace.final_answer.text if trace.final_answer else "(no answer)",
        "",
        f"Cited: {', '.join(payload['cited']) or '-'}",
        f"Session: {trace.session_id} ({payload['termination']}, {trace.tool_turns} tool turns)",
        f"Trace: {trace.trace_path}",
    ]
    return payload, "\n".join(lines)


# --- scenario / eval ---

def cmd_scenario_generate(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    overrides = {"seed": args.seed}
    if args.contracts is not None:
        overrides["contracts"] = args.contracts
    scenario = generate_scenario(ScenarioConfig(**overrides), Path(args.out))
    payload = {
        "root": str(scenario.root),
        "engine_config": str(scenario.engine_config),
        "sources": {k: str(v) for k, v in scenario.sources.items()},
        "labels": len(scenario.labels),
    }
    text = (f"Scenario seed {args.seed} written to {scenario.root}\n"
            f"{len(scenario.labels)} blocked contracts; engine config at {scenario.engine_config}")
    return payload, text


def _scenario_seed(config: EngineConfig) -> int:
    labels = Path(config.scenario_dir) / LABELS_FILE
    return int(read_document(labels).get("seed", 0)) if labels.is_file() else 0


def cmd_eval_run(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    mode = args.mode or config.mode
    report = asyncio.run(run_eval(args.suite, config, mode, seed=_scenario_seed(config),
                                  report_dir=Path(args.report_dir) if args.report_dir else None,
                                  concurrency=args.concurrency))
    return report.model_dump(mode="json"), render_report(report).rstrip("\n")


# --- trace ---

def cmd_trace_show(config: EngineConfig, args: argparse.Namespace) -> Outcome:
    path = trace_path(config.trace_dir, args.session_id)
    if not path.is_file():
        raise UnknownEntity(f"No trace for session '{args.session_id}' under {config.trace_dir}",
                            {"path": str(path)})
    records = load_trace(path)
    summary = verify_trace(records) if args.verify else None
    trace = rebuild_trace(records)
    lines = [f"Session {trace.session_id} [{trace.mode}] {trace.query}"]
    for step in trace.steps:
        calls = ", ".join(c.tool_name for c in step.tool_calls)
        lines.append(f"  #{step.index} {step.kind}{': ' + calls if calls else ''}")
    for entry in trace.evidence:
        lines.append(f"  evidence {entry.evidence_id} <- {entry.tool_name} ({', '.join(entry.node_ids) or '-'})")
    termination = trace.termination.value if trace.termination else "open"
    lines.append(f"Termination: {termination} after {trace.tool_turns} tool turns")
    if trace.final_answer:
        lines.append(trace.final_answer.text)
    if summary is not None:
        lines.append(f"Verified: {summary['records']} records, all invariants hold")
    payload = {"trace": trace.model_dump(mode="json"), "verified": summary}
    return payload, "\n".join(lines)


# --- Parser ---

def _add_principal_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--as", dest="principal_id", help="Principal id (defaults to the configured principal)")
    parser.add_argument("--role", dest="roles", action="append", help="Role; repeat for several")
    parser.add_argument("--tenant", help="Tenant of the principal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperedge-reasoner",
                                     description="Hypergraph-ontology reasoning over federated snapshot stores.")
    parser.add_argument("--config", type=Path, help="Engine config file (config_version: 1)")
    parser.add_argument("--format", choices=("text", "machine"), default="text")
    parser.add_argument("--log-level", help=f"Logging level (default ${LOG_LEVEL_VARIABLE} or {DEFAULT_LOG_LEVEL})")
    commands = parser.add_subparsers(dest="command", required=True)

    def leaf(group, name: str, handler: Callable[[EngineConfig, argparse.Namespace], Outcome],
             help_text: str) -> argparse.ArgumentParser:
        sub = group.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    ontology = commands.add_parser("ontology", help="Ontology checks and bootstrapping").add_subparsers(
        dest="action", required=True)
    leaf(ontology, "validate", cmd_ontology_validate, "Validate the ontology at the configured root")
    _add_principal_flags(leaf(ontology, "auto-instantiate", cmd_ontology_auto_instantiate,
                              "Queue declarative drafts for unbound nodes"))

    hyperedge = commands.add_parser("hyperedge", help="Hyperedge drafting and review").add_subparsers(
        dest="action", required=True)
    draft = leaf(hyperedge, "draft", cmd_hyperedge_draft, "Draft a hyperedge from intent text or a trace")
    draft.add_argument("intent", nargs="?", help="What the hyperedge should capture")
    draft.add_argument("--kind", choices=[k.value for k in HyperedgeKind], default=HyperedgeKind.DECLARATIVE.value)
    draft.add_argument("--scope", default="global")
    draft.add_argument("--from-trace", metavar="SESSION_ID", help="Distill an answered session into a procedure")
    draft.add_argument("--title", help="Title of a distilled procedure")
    draft.add_argument("--update", action="store_true",
                       help="The draft replaces the published hyperedge with the same id")
    draft.add_argument("--out", default="draft.yaml", help="Where the draft document is written")
    _add_principal_flags(draft)
    submit = leaf(hyperedge, "submit", cmd_hyperedge_submit, "Open a review ticket for a draft document")
    submit.add_argument("draft", help="Draft document written by 'hyperedge draft'")
    _add_principal_flags(submit)

    review = hyperedge.add_parser("review", help="Review tickets").add_subparsers(dest="review_action", required=True)
    listing = leaf(review, "list", cmd_review_list, "List tickets")
    listing.add_argument("--state", choices=["all"] + [s.value for s in TicketState], default="pending")
    listing.add_argument("--interactive", action="store_true", help="Prompt for a decision on each pending ticket")
    _add_principal_flags(listing)
    for name, handler in (("approve", cmd_review_approve), ("reject", cmd_review_reject)):
        decide = leaf(review, name, handler, f"{name.capitalize()} a pending ticket")
        decide.add_argument("ticket_id")
        decide.add_argument("--note", default="")
        _add_principal_flags(decide)

    query = commands.add_parser("query", help="Reasoning sessions").add_subparsers(dest="action", required=True)
    run = leaf(query, "run", cmd_query_run, "Answer one question")
    run.add_argument("text")
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--budget", type=int, help="Tool-turn budget for this session")
    run.add_argument("--session-id")
    _add_principal_flags(run)

    scenario = commands.add_parser("scenario", help="Synthetic scenarios").add_subparsers(dest="action", required=True)
    generate = leaf(scenario, "generate", cmd_scenario_generate, "Generate stores, ontology and questions")
    generate.add_argument("--seed", type=int, required=True)
    generate.add_argument("--contracts", type=int)
    generate.add_argument("--out", default="scenario", help="Parent directory; the scenario lands in <out>/<seed>")

    evaluation = commands.add_parser("eval", help="Evaluation suites").add_subparsers(dest="action", required=True)
    eval_run = leaf(evaluation, "run", cmd_eval_run, "Run a suite and write its report")
    eval_run.add_argument("--suite", choices=SUITES, required=True)
    eval_run.add_argument("--mode", choices=MODES)
    eval_run.add_argument("--report-dir")
    eval_run.add_argument("--concurrency", type=int, default=1)

    trace = commands.add_parser("trace", help="Session traces").add_subparsers(dest="action", required=True)
    show = leaf(trace, "show", cmd_trace_show, "Print a session trace")
    show.add_argument("session_id")
    show.add_argument("--verify", action="store_true", help="Re-check every trace invariant")
    return parser


def setup_logging(level: Optional[str]) -> None:
    name = (level or os.getenv(LOG_LEVEL_VARIABLE) or DEFAULT_LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING), stream=sys.stderr,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(args.log_level)

    try:
        config = load_config(args.config)
        emit(args.handler(config, args), args.format)
    except ReasonerError as e:
        logger.debug(f"Command failed: {e}", exc_info=True)
        if args.format == "machine":
            print(json.dumps({"error": e.to_dict()}, indent=2, sort_keys=True, default=str))
        else:
            invariant = e.detail.get("invariant")
            print(f"Error: {e.message}" + (f" (invariant: {invariant})" if invariant else ""), file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
