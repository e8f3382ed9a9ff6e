# src/core/errors.py - Domain exception hierarchy
# Every error carries a stable code and a structured detail payload.

from typing import Any, Optional


class ReasonerError(Exception):
    """Base class for all domain errors raised by the reasoner."""

    code: str = "reasoner_error"

    def __init__(self, message: str, detail: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail or {}

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "detail": self.detail}


# --- Configuration ---
class ConfigError(ReasonerError):
    code = "config_error"


# --- Ontology ---
class OntologyParseError(ReasonerError):
    code = "ontology_parse_error"

    def __init__(self, path: str, line: Optional[int], reason: str):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"Malformed document {where}: {reason}", {"path": path, "line": line})
        self.path = path
        self.line = line


class OntologyValidationError(ReasonerError):
    code = "ontology_invalid"

    def __init__(self, message: str, report: Any):
        super().__init__(message, {"report": report.model_dump(mode="json")})
        self.report = report


class MutationRejected(ReasonerError):
    code = "mutation_rejected"

    def __init__(self, message: str, report: Any):
        super().__init__(message, {"report": report.model_dump(mode="json")})
        self.report = report


class WriteContention(ReasonerError):
    code = "write_contention"


class UnknownEntity(ReasonerError):
    code = "unknown_entity"


class RetiredHyperedge(ReasonerError):
    code = "retired_hyperedge"


# --- Substrate ---
class SourceError(ReasonerError):
    code = "source_error"


class AccessDenied(ReasonerError):
    code = "access_denied"


class UnboundPlaceholder(ReasonerError):
    code = "unbound_placeholder"


class QueryExecutionError(ReasonerError):
    code = "query_failed"


class DisconnectedSubset(ReasonerError):
    code = "disconnected_subset"


class KeyPropagationOverflow(ReasonerError):
    code = "key_propagation_overflow"


class HopExecutionError(ReasonerError):
    code = "hop_failed"


class ArtifactIntegrityError(ReasonerError):
    code = "artifact_digest_mismatch"


# --- Retrieval / exploration ---
class EmbeddingError(ReasonerError):
    code = "embedding_failed"


class ModeViolation(ReasonerError):
    code = "mode_violation"


class DepthBoundExceeded(ReasonerError):
    code = "depth_bound_exceeded"


# --- Builder / governance ---
class DraftError(ReasonerError):
    code = "draft_failed"


class InsufficientRole(ReasonerError):
    code = "insufficient_role"

    def __init__(self, message: str, missing_role: str):
        super().__init__(message, {"missing_role": missing_role})
        self.missing_role = missing_role


class TicketAlreadyDecided(ReasonerError):
    code = "ticket_already_decided"


class TenantIsolationError(ReasonerError):
    code = "tenant_isolation"


class HyperedgeConflict(ReasonerError):
    code = "hyperedge_conflict"


# --- Sandbox ---
class PolicyViolation(ReasonerError):
    code = "policy_violation"


class AttachmentRefused(ReasonerError):
    code = "attachment_refused"


class SpawnError(ReasonerError):
    code = "spawn_failed"


# --- Engine ---
class BackendError(ReasonerError):
    code = "backend_failed"


class CompactionError(ReasonerError):
    code = "context_over_budget"


class CitationIntegrityError(ReasonerError):
    code = "citation_integrity"


class TraceIntegrityError(ReasonerError):
    code = "trace_integrity"

    def __init__(self, message: str, invariant: str, record_index: Optional[int] = None):
        super().__init__(message, {"invariant": invariant, "record_index": record_index})
        self.invariant = invariant
        self.record_index = record_index


# --- Scenario / evaluation ---
class ScenarioConfigError(ReasonerError):
    code = "scenario_config_error"


class QuestionCountError(ReasonerError):
    code = "question_count_error"
