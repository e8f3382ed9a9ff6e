# src/core/ontology.py - Ontology store: load/save, validation, auto-instantiation, mutation
# Readers work on an immutable published snapshot; a single writer publishes new versions.

import logging
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional

import networkx as nx
from pydantic import ValidationError

from ..models.ontology import (
    BinaryEdge, Change, GraphNode, Hyperedge, HyperedgeKind, HyperedgeSummary,
    Lifecycle, UnifiedGraph, ValidationReport, Violation,
)
from ..utils.digests import digest_value
from ..utils.paths import resolve_inside_root
from .documents import list_documents, read_document, safe_filename, write_document, DOCUMENT_SUFFIX
from .errors import MutationRejected, OntologyParseError, OntologyValidationError, WriteContention

logger = logging.getLogger(__name__)

DEFAULT_SOURCES = ("BPM", "ERP", "SRM", "WMS")
MANIFEST_NAME = "ontology.yaml"
NODES_DIR = "nodes"
EDGES_DIR = "edges"
HYPEREDGES_DIR = "hyperedges"
REVIEWS_DIR = "reviews"
ATTACHMENTS_DIR = "attachments"

# Mentions of executable artifacts inside soft-axiom text
ATTACHMENT_MENTION = re.compile(r"\battachments?/|\battachment\b|\.py\b", re.IGNORECASE)


def _frozen(mapping: dict) -> Mapping:
    return MappingProxyType(dict(sorted(mapping.items())))


def incidence_pairs(hyperedge: Hyperedge) -> set[tuple[str, str]]:
    return {(node_id, hyperedge.id) for node_id in hyperedge.member_nodes}


def inter_pairs(hyperedge: Hyperedge) -> set[tuple[str, str]]:
    return {(hyperedge.id, other) for other in hyperedge.related_hyperedges}


def recompute_incidence(hyperedges: Iterable[Hyperedge]) -> tuple[frozenset, frozenset]:
    """E_VH and E_H computed from scratch."""
    incidence: set[tuple[str, str]] = set()
    inter: set[tuple[str, str]] = set()
    for he in hyperedges:
        incidence |= incidence_pairs(he)
        inter |= inter_pairs(he)
    return frozenset(incidence), frozenset(inter)


def _build_graph(nodes: Mapping, edges: Mapping, hyperedges: Mapping, incidence, inter) -> nx.MultiGraph:
    graph = nx.MultiGraph()
    for node_id in nodes:
        graph.add_node(node_id, kind="base")
    for he in hyperedges.values():
        graph.add_node(he.id, kind="hyperedge", lifecycle=he.lifecycle.value)
    for edge in edges.values():
        graph.add_edge(edge.src, edge.dst, key=edge.id, layer="E", label=edge.label)
    for node_id, he_id in sorted(incidence):
        if node_id in graph and he_id in graph:
            graph.add_edge(node_id, he_id, key=f"vh:{node_id}|{he_id}", layer="E_VH")
    for a, b in sorted(inter):
        if a in graph and b in graph:
            graph.add_edge(a, b, key=f"h:{a}|{b}", layer="E_H")
    return nx.freeze(graph)


@dataclass(frozen=True)
class OntologySnapshot:
    """One published, immutable version of the ontology."""

    version: int
    sources: tuple[str, ...]
    nodes: Mapping[str, GraphNode]
    edges: Mapping[str, BinaryEdge]
    hyperedges: Mapping[str, Hyperedge]
    incidence: frozenset
    inter: frozenset
    graph: nx.MultiGraph = field(compare=False, repr=False)
    root: Optional[Path] = None

    @classmethod
    def build(cls, version: int, sources, nodes: dict, edges: dict, hyperedges: dict,
              root: Optional[Path] = None, incidence=None, inter=None) -> "OntologySnapshot":
        if incidence is None or inter is None:
            incidence, inter = recompute_incidence(hyperedges.values())
        return cls(
            version=version,
            sources=tuple(sorted(set(sources))),
            nodes=_frozen(nodes),
            edges=_frozen(edges),
            hyperedges=_frozen(hyperedges),
            incidence=frozenset(incidence),
            inter=frozenset(inter),
            graph=_build_graph(nodes, edges, hyperedges, incidence, inter),
            root=root,
        )

    def unified(self) -> UnifiedGraph:
        return UnifiedGraph(
            base_nodes=frozenset(self.nodes),
            binary_edges=frozenset((e.id, e.src, e.dst) for e in self.edges.values()),
            hyperedge_nodes=frozenset(self.hyperedges),
            incidence_edges=self.incidence,
            inter_hyperedge_edges=self.inter,
        )

    def approved_hyperedges(self, kinds: Optional[Iterable[HyperedgeKind]] = None) -> list[Hyperedge]:
        allowed = set(kinds) if kinds is not None else None
        return [
            he for he in self.hyperedges.values()
            if he.lifecycle == Lifecycle.APPROVED and (allowed is None or he.kind in allowed)
        ]

    def summaries(self, kinds: Optional[Iterable[HyperedgeKind]] = None) -> list[HyperedgeSummary]:
        return [he.summary() for he in self.approved_hyperedges(kinds)]

    def incident_hyperedges(self, node_id: str, include_retired: bool = False) -> list[Hyperedge]:
        ids = sorted(he_id for n, he_id in self.incidence if n == node_id)
        found = [self.hyperedges[i] for i in ids if i in self.hyperedges]
        return found if include_retired else [he for he in found if he.active]

    def digest(self) -> str:
        return self.content_digest

    @cached_property
    def content_digest(self) -> str:
        return digest_value({
            "sources": list(self.sources),
            "nodes": [n.model_dump(mode="json", by_alias=True) for n in self.nodes.values()],
            "edges": [e.model_dump(mode="json") for e in self.edges.values()],
            "hyperedges": [h.model_dump(mode="json") for h in self.hyperedges.values()],
        })


class WriteHandle:
    """Proof that the holder is the single active writer of a store."""

    def __init__(self, store: "OntologyStore"):
        self.store = store
        self.active = True


class OntologyStore:
    """Holds the currently published snapshot and serializes writers."""

    def __init__(self, snapshot: OntologySnapshot):
        self._snapshot = snapshot
        self._write_lock = threading.Lock()
        self._publish_lock = threading.Lock()

    @classmethod
    def empty(cls, sources: Iterable[str] = DEFAULT_SOURCES, root: Optional[Path] = None) -> "OntologyStore":
        return cls(OntologySnapshot.build(0, sources, {}, {}, {}, root=root))

    @classmethod
    def from_entities(cls, nodes: Iterable[GraphNode] = (), edges: Iterable[BinaryEdge] = (),
                      hyperedges: Iterable[Hyperedge] = (), sources: Iterable[str] = DEFAULT_SOURCES,
                      root: Optional[Path] = None) -> "OntologyStore":
        return cls(OntologySnapshot.build(
            0, sources,
            {n.id: n for n in nodes}, {e.id: e for e in edges}, {h.id: h for h in hyperedges},
            root=root,
        ))

    @property
    def snapshot(self) -> OntologySnapshot:
        return self._snapshot

    @property
    def root(self) -> Optional[Path]:
        return self._snapshot.root

    def bind(self, root: Path) -> None:
        """Binds the store to a directory so accepted mutations are persisted there."""
        with self._publish_lock:
            s = self._snapshot
            self._snapshot = OntologySnapshot.build(
                s.version, s.sources, dict(s.nodes), dict(s.edges), dict(s.hyperedges),
                root=root, incidence=s.incidence, inter=s.inter,
            )

    def publish(self, snapshot: OntologySnapshot) -> None:
        with self._publish_lock:
            self._snapshot = snapshot
        logger.info(f"Ontology snapshot v{snapshot.version} published")

    @contextmanager
    def writer(self) -> Iterator[WriteHandle]:
        if not self._write_lock.acquire(blocking=False):
            raise WriteContention("Another writer holds the ontology write handle")
        handle = WriteHandle(self)
        try:
            yield handle
        finally:
            handle.active = False
            self._write_lock.release()


# --- Loading / saving ---

def _parse_entities(paths: list[Path], model) -> list:
    entities = []
    for path in paths:
        data = read_document(path)
        try:
            entities.append(model.model_validate(data))
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first.get("loc", ()))
            raise OntologyParseError(str(path), None, f"{where}: {first.get('msg')}")
    return entities


def load_ontology(root: Path) -> OntologyStore:
    """Loads every document under root. All-or-nothing: any parse error or invariant violation aborts."""
    root = Path(root)
    if not root.is_dir():
        raise OntologyParseError(str(root), None, "ontology root is not a directory")
    sources = list(DEFAULT_SOURCES)
    manifest = root / MANIFEST_NAME
    if manifest.is_file():
        meta = read_document(manifest)
        sources = [str(s) for s in meta.get("sources", sources)]

    nodes = _parse_entities(list_documents(root / NODES_DIR), GraphNode)
    edges = _parse_entities(list_documents(root / EDGES_DIR), BinaryEdge)
    hyperedges = _parse_entities(list_documents(root / HYPEREDGES_DIR), Hyperedge)

    report = _check(sources, nodes, edges, hyperedges, root)
    if not report.ok:
        named = "; ".join(f"{v.entity_id}: {v.message}" for v in report.errors()[:5])
        raise OntologyValidationError(f"Ontology at {root} violates invariants: {named}", report)
    for warning in report.warnings():
        logger.warning(f"Ontology Load: {warning.entity_id}: {warning.message}")

    store = OntologyStore.from_entities(nodes, edges, hyperedges, sources=sources, root=root)
    logger.info(f"Loaded ontology from {root}: {len(nodes)} nodes, {len(edges)} edges, {len(hyperedges)} hyperedges")
    return store


def _document_payloads(snapshot: OntologySnapshot) -> dict[str, dict[Path, dict]]:
    return {
        NODES_DIR: {Path(safe_filename(n.id) + DOCUMENT_SUFFIX): n.model_dump(mode="json", by_alias=True)
                    for n in snapshot.nodes.values()},
        EDGES_DIR: {Path(safe_filename(e.id) + DOCUMENT_SUFFIX): e.model_dump(mode="json")
                    for e in snapshot.edges.values()},
        HYPEREDGES_DIR: {Path(safe_filename(h.id) + DOCUMENT_SUFFIX): h.model_dump(mode="json")
                         for h in snapshot.hyperedges.values()},
    }


def save_ontology(store: OntologyStore, root: Path) -> None:
    """Writes one document per entity; stale documents in the typed directories are removed."""
    root = Path(root)
    snapshot = store.snapshot
    root.mkdir(parents=True, exist_ok=True)
    write_document(root / MANIFEST_NAME, {"sources": list(snapshot.sources)})
    for subdir, payloads in _document_payloads(snapshot).items():
        directory = root / subdir
        directory.mkdir(parents=True, exist_ok=True)
        for name, payload in payloads.items():
            write_document(directory / name, payload)
        for existing in list_documents(directory):
            if Path(existing.name) not in payloads:
                existing.unlink()
                logger.info(f"Removed stale ontology document {existing}")
    logger.info(f"Saved ontology snapshot v{snapshot.version} to {root}")


def _persist_change(snapshot: OntologySnapshot, entity: str, entity_id: str) -> None:
    subdir = {"node": NODES_DIR, "edge": EDGES_DIR, "hyperedge": HYPEREDGES_DIR}[entity]
    path = snapshot.root / subdir / (safe_filename(entity_id) + DOCUMENT_SUFFIX)
    current = {"node": snapshot.nodes, "edge": snapshot.edges, "hyperedge": snapshot.hyperedges}[entity].get(entity_id)
    if current is None:
        if path.exists():
            path.unlink()
        return
    write_document(path, current.model_dump(mode="json", by_alias=True))


# --- Validation ---

def validate(store: OntologyStore) -> ValidationReport:
    """Lists every violated invariant. Side-effect free."""
    s = store.snapshot
    report = _check(s.sources, list(s.nodes.values()), list(s.edges.values()), list(s.hyperedges.values()), s.root)
    incidence, inter = recompute_incidence(s.hyperedges.values())
    if incidence != s.incidence or inter != s.inter:
        report.violations.append(Violation(
            severity="error", entity_id="<graph>", rule="incidence",
            message="maintained incidence sets differ from the recomputed ones",
        ))
    return report


def _duplicates(ids: list[str]) -> list[str]:
    seen: set[str] = set()
    dupes = []
    for entity_id in sorted(ids):
        if entity_id in seen:
            dupes.append(entity_id)
        seen.add(entity_id)
    return dupes


def _check(sources, nodes: list[GraphNode], edges: list[BinaryEdge], hyperedges: list[Hyperedge],
           root: Optional[Path]) -> ValidationReport:
    violations: list[Violation] = []

    def error(entity_id: str, message: str, rule: str) -> None:
        violations.append(Violation(severity="error", entity_id=entity_id, message=message, rule=rule))

    def warning(entity_id: str, message: str, rule: str) -> None:
        violations.append(Violation(severity="warning", entity_id=entity_id, message=message, rule=rule))

    registered = set(sources)
    node_map: dict[str, GraphNode] = {}
    for node_id in _duplicates([n.id for n in nodes]):
        error(node_id, f"duplicate graph node id '{node_id}'", "unique-id")
    for node in sorted(nodes, key=lambda n: n.id):
        node_map.setdefault(node.id, node)
        if node.source not in registered:
            error(node.id, f"source '{node.source}' is not a registered data source", "registered-source")
        names = node.field_names()
        for dup in _duplicates(names):
            error(node.id, f"field '{dup}' declared more than once", "unique-field")
        for placeholder in node.placeholders():
            if placeholder not in names:
                error(node.id, f"query_template placeholder ':{placeholder}' names no schema field", "placeholder-field")

    for edge_id in _duplicates([e.id for e in edges]):
        error(edge_id, f"duplicate binary edge id '{edge_id}'", "unique-id")
    for edge in sorted(edges, key=lambda e: e.id):
        src, dst = node_map.get(edge.src), node_map.get(edge.dst)
        if src is None:
            error(edge.id, f"src '{edge.src}' is not a graph node", "dangling")
        if dst is None:
            error(edge.id, f"dst '{edge.dst}' is not a graph node", "dangling")
        if edge.src == edge.dst and not edge.self_referential:
            error(edge.id, "src equals dst but the edge is not flagged self_referential", "self-loop")
        for triple in edge.join_spec:
            if src is not None and src.field(triple.src_field) is None:
                error(edge.id, f"src_field '{triple.src_field}' absent from {edge.src} schema", "join-field")
            if dst is not None and dst.field(triple.dst_field) is None:
                error(edge.id, f"dst_field '{triple.dst_field}' absent from {edge.dst} schema", "join-field")

    he_ids = {h.id for h in hyperedges}
    for he_id in _duplicates([h.id for h in hyperedges]):
        error(he_id, f"duplicate hyperedge id '{he_id}'", "unique-id")
    for clash in sorted(he_ids & set(node_map)):
        error(clash, "hyperedge id collides with a graph node id", "unique-id")

    surface_owner: dict[str, str] = {}
    for he in sorted(hyperedges, key=lambda h: h.id):
        for form in he.surface_forms():
            key = form.casefold()
            owner = surface_owner.get(key)
            if owner is not None:
                error(he.id, f"title/alias '{form}' already used by {owner}", "unique-title")
            else:
                surface_owner[key] = he.id

        for member in he.member_nodes:
            if member not in node_map:
                error(he.id, f"member node '{member}' does not exist", "dangling")
        if he.lifecycle == Lifecycle.APPROVED and not he.member_nodes:
            error(he.id, "approved hyperedge has no member nodes", "non-empty-members")
        for related in he.related_hyperedges:
            if related == he.id:
                error(he.id, "hyperedge lists itself in related_hyperedges", "self-reference")
            elif related not in he_ids:
                error(he.id, f"related hyperedge '{related}' does not exist", "dangling")

        if he.attachments and he.kind != HyperedgeKind.PROCEDURAL:
            error(he.id, "attachments are only allowed on procedural hyperedges", "attachment-kind")
        for attachment in he.attachments:
            if Path(attachment).is_absolute():
                error(he.id, f"attachment '{attachment}' must be relative to the ontology root", "attachment-root")
            elif root is not None:
                resolved = resolve_inside_root(root, attachment)
                if resolved is None:
                    error(he.id, f"attachment '{attachment}' resolves outside the ontology root", "attachment-root")
                elif not resolved.is_file():
                    warning(he.id, f"attachment '{attachment}' not found under the ontology root", "attachment-missing")
            elif ".." in Path(attachment).parts:
                error(he.id, f"attachment '{attachment}' resolves outside the ontology root", "attachment-root")
        if (he.kind == HyperedgeKind.PROCEDURAL and not he.attachments
                and ATTACHMENT_MENTION.search(he.semantic_details)):
            warning(he.id, "semantic_details mention an attachment but attachments is empty", "attachment-mention")

    return ValidationReport(violations=violations)


# --- Auto-instantiation ---

def _describe_fields(node: GraphNode) -> str:
    lines = []
    for spec in node.schema_:
        annotation = spec.semantic_annotation or "no annotation"
        lines.append(f"- {spec.name} ({spec.value_kind.value}): {annotation}")
    return "\n".join(lines)


def auto_instantiate_declaratives(store: OntologyStore) -> list[Hyperedge]:
    """One draft singleton declarative per graph node lacking an incident declarative hyperedge."""
    s = store.snapshot
    taken_titles = {form.casefold() for he in s.hyperedges.values() for form in he.surface_forms()}
    taken_ids = set(s.hyperedges) | set(s.nodes)
    drafts: list[Hyperedge] = []
    for node_id, node in s.nodes.items():
        bound = any(he.kind == HyperedgeKind.DECLARATIVE for he in s.incident_hyperedges(node_id))
        if bound:
            continue

        base_title = f"Declarative: {node.name}"
        title, n = base_title, 1
        while title.casefold() in taken_titles:
            n += 1
            title = f"{base_title}-{n}"
        taken_titles.add(title.casefold())

        suffix = node_id.split(":", 1)[-1]
        base_id = f"hyperedge:declarative_{safe_filename(suffix)}"
        he_id, n = base_id, 1
        while he_id in taken_ids:
            n += 1
            he_id = f"{base_id}_{n}"
        taken_ids.add(he_id)

        description = node.description or f"Entity proxy for {node.name} in {node.source}."
        details = f"{description}\n\nFields:\n{_describe_fields(node)}" if node.schema_ else description
        drafts.append(Hyperedge(
            id=he_id,
            title=title,
            description=description,
            kind=HyperedgeKind.DECLARATIVE,
            scope="global",
            member_nodes=[node_id],
            semantic_details=details,
            lifecycle=Lifecycle.DRAFT,
        ))
    logger.info(f"Auto-instantiation produced {len(drafts)} declarative drafts")
    return drafts


# --- Mutation ---

def _reject(message: str, entity_id: str, rule: str) -> MutationRejected:
    report = ValidationReport(violations=[Violation(severity="error", entity_id=entity_id, message=message, rule=rule)])
    return MutationRejected(message, report)


def _construct(model, payload: dict, entity_id: str):
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise _reject(f"invalid {model.__name__} payload: {where}: {first.get('msg')}", entity_id, "schema")


def _dependents(s: OntologySnapshot, entity: str, entity_id: str) -> list[str]:
    if entity == "node":
        refs = [e.id for e in s.edges.values() if entity_id in (e.src, e.dst)]
        refs += [h.id for h in s.hyperedges.values() if entity_id in h.member_nodes]
        return sorted(refs)
    if entity == "hyperedge":
        return sorted(h.id for h in s.hyperedges.values() if entity_id in h.related_hyperedges and h.active)
    return []


def mutate(store: OntologyStore, change: Change, handle: Optional[WriteHandle] = None) -> ValidationReport:
    """Applies one change atomically. Raises MutationRejected (store unchanged) on any error violation."""
    if handle is None:
        with store.writer() as own:
            return mutate(store, change, own)
    if handle.store is not store or not handle.active:
        raise WriteContention("Write handle is not active for this store")

    s = store.snapshot
    try:
        entity_id = change.target_id()
    except ValueError as e:
        raise _reject(str(e), "<unknown>", "schema")
    collections = {"node": dict(s.nodes), "edge": dict(s.edges), "hyperedge": dict(s.hyperedges)}
    target = collections[change.entity]
    model = {"node": GraphNode, "edge": BinaryEdge, "hyperedge": Hyperedge}[change.entity]
    incidence, inter = set(s.incidence), set(s.inter)
    existing = target.get(entity_id)

    if change.op == "add":
        if existing is not None:
            raise _reject(f"{change.entity} '{entity_id}' already exists", entity_id, "unique-id")
        new = _construct(model, change.payload or {}, entity_id)
        target[entity_id] = new
        if isinstance(new, Hyperedge):
            incidence |= incidence_pairs(new)
            inter |= inter_pairs(new)
    elif change.op == "update":
        if existing is None:
            raise _reject(f"unknown {change.entity} '{entity_id}'", entity_id, "unknown")
        merged = {**existing.model_dump(by_alias=True), **(change.payload or {}), "id": entity_id}
        new = _construct(model, merged, entity_id)
        target[entity_id] = new
        if isinstance(new, Hyperedge):
            incidence = (incidence - incidence_pairs(existing)) | incidence_pairs(new)
            inter = (inter - inter_pairs(existing)) | inter_pairs(new)
    else:
        if existing is None:
            raise _reject(f"unknown {change.entity} '{entity_id}'", entity_id, "unknown")
        dependents = _dependents(s, change.entity, entity_id)
        if dependents:
            raise _reject(
                f"cannot retire {change.entity} '{entity_id}': referenced by {', '.join(dependents)}",
                entity_id, "dependency",
            )
        if change.entity == "hyperedge":
            target[entity_id] = existing.model_copy(update={"lifecycle": Lifecycle.RETIRED})
        else:
            del target[entity_id]

    candidate = OntologySnapshot.build(
        s.version + 1, s.sources, collections["node"], collections["edge"], collections["hyperedge"],
        root=s.root, incidence=incidence, inter=inter,
    )
    report = validate(OntologyStore(candidate))
    if not report.ok:
        named = "; ".join(f"{v.entity_id}: {v.message}" for v in report.errors()[:5])
        logger.warning(f"Ontology Mutation rejected ({change.op} {change.entity} {entity_id}): {named}")
        raise MutationRejected(f"Change rejected: {named}", report)

    store.publish(candidate)
    if candidate.root is not None:
        _persist_change(candidate, change.entity, entity_id)
    logger.info(f"Ontology Mutation: {change.op} {change.entity} {entity_id} -> v{candidate.version}")
    return report
