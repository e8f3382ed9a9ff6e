# src/core/explore.py - Structural exploration of the unified graph; never touches a data source

import logging
from typing import Literal

from ..models.explore import AdjacencyReport, Neighbor, PathElement, PathResult
from ..models.ontology import BinaryEdge, HyperedgeSummary, Lifecycle
from .errors import DepthBoundExceeded, ModeViolation, RetiredHyperedge, UnknownEntity
from .ontology import OntologySnapshot

logger = logging.getLogger(__name__)

# --- Configuration ---
HARD_DEPTH_BOUND = 6
PATH_COUNT_CAP = 64

KindFilter = Literal["base-only", "all-kinds"]
_LAYERS = {"base-only": {"E"}, "all-kinds": {"E", "E_VH", "E_H"}}


def _join_summary(edge: BinaryEdge) -> str:
    return ", ".join(f"{t.src_field} -> {t.dst_field} [{t.transform}]" for t in edge.join_spec)


def inspect_adjacency(snapshot: OntologySnapshot, node_id: str) -> AdjacencyReport:
    """The 1-hop binary neighborhood of a base node plus its incident hyperedge summaries."""
    if node_id in snapshot.hyperedges:
        raise ModeViolation(f"'{node_id}' is a hyperedge; adjacency inspection is restricted to base graph nodes")
    node = snapshot.nodes.get(node_id)
    if node is None:
        raise UnknownEntity(f"Unknown graph node '{node_id}'")

    neighbors = []
    for edge in snapshot.edges.values():
        if edge.src == node_id:
            other = snapshot.nodes[edge.dst]
            neighbors.append(Neighbor(edge_id=edge.id, label=edge.label, direction="out", node_id=edge.dst,
                                      description=other.description, join_spec=_join_summary(edge)))
        if edge.dst == node_id:
            other = snapshot.nodes[edge.src]
            neighbors.append(Neighbor(edge_id=edge.id, label=edge.label, direction="in", node_id=edge.src,
                                      description=other.description, join_spec=_join_summary(edge)))
    neighbors.sort(key=lambda n: (n.direction, n.node_id, n.edge_id))
    incident = [he.summary() for he in snapshot.incident_hyperedges(node_id) if he.lifecycle == Lifecycle.APPROVED]
    return AdjacencyReport(node=node_id, source=node.source, description=node.description, neighbors=neighbors,
                           incident_hyperedges=incident)


def _traversable(snapshot: OntologySnapshot, vertex: str) -> bool:
    if vertex in snapshot.nodes:
        return True
    he = snapshot.hyperedges.get(vertex)
    return he is not None and he.lifecycle == Lifecycle.APPROVED


def adjacency_lists(snapshot: OntologySnapshot, kind_filter: KindFilter) -> dict[str, list[str]]:
    """Undirected, deduplicated, sorted neighbor lists over the layers the filter admits."""
    layers = _LAYERS[kind_filter]
    adjacency: dict[str, set[str]] = {}
    for u, v, layer in snapshot.graph.edges(data="layer"):
        if layer not in layers or u == v:
            continue
        if not (_traversable(snapshot, u) and _traversable(snapshot, v)):
            continue
        adjacency.setdefault(u, set()).add(v)
        adjacency.setdefault(v, set()).add(u)
    return {vertex: sorted(others) for vertex, others in adjacency.items()}


def _element(snapshot: OntologySnapshot, vertex: str) -> PathElement:
    return PathElement(id=vertex, kind="base" if vertex in snapshot.nodes else "hyperedge")


def discover_paths(snapshot: OntologySnapshot, src_id: str, dst_id: str, max_depth: int,
                   kind_filter: KindFilter = "base-only", hard_bound: int = HARD_DEPTH_BOUND,
                   path_cap: int = PATH_COUNT_CAP) -> PathResult:
    """Level-by-level enumeration of simple paths with at most max_depth edges."""
    for endpoint in (src_id, dst_id):
        if endpoint in snapshot.nodes:
            continue
        he = snapshot.hyperedges.get(endpoint)
        if he is None:
            raise UnknownEntity(f"Unknown endpoint '{endpoint}'")
        if he.lifecycle == Lifecycle.RETIRED:
            raise RetiredHyperedge(f"Hyperedge '{endpoint}' is retired")
        if kind_filter == "base-only":
            raise ModeViolation(f"'{endpoint}' is a hyperedge; base-only paths connect graph nodes")
    if max_depth < 1:
        raise DepthBoundExceeded(f"max_depth must be at least 1, got {max_depth}", {"max_depth": max_depth})
    if max_depth > hard_bound:
        raise DepthBoundExceeded(f"max_depth {max_depth} exceeds the hard bound {hard_bound}",
                                 {"max_depth": max_depth, "hard_bound": hard_bound})

    if src_id == dst_id:
        return PathResult(paths=[[_element(snapshot, src_id)]], depth_bound=max_depth)

    adjacency = adjacency_lists(snapshot, kind_filter)
    found: list[tuple[str, ...]] = []
    truncated = False
    frontier: list[tuple[str, ...]] = [(src_id,)]
    for depth in range(1, max_depth + 1):
        reached: list[tuple[str, ...]] = []
        extended: list[tuple[str, ...]] = []
        for path in frontier:
            for nxt in adjacency.get(path[-1], ()):
                if nxt in path:
                    continue
                if nxt == dst_id:
                    reached.append(path + (nxt,))
                else:
                    extended.append(path + (nxt,))
        reached.sort()
        room = path_cap - len(found)
        if len(reached) > room:
            found.extend(reached[:room])
            truncated = True
            break
        found.extend(reached)
        frontier = extended
        if not frontier:
            break
    else:
        truncated = truncated or bool(frontier)

    logger.info(f"Path Discovery: {src_id} -> {dst_id} ({kind_filter}, depth {max_depth}): {len(found)} paths")
    return PathResult(
        paths=[[_element(snapshot, v) for v in path] for path in found],
        depth_bound=max_depth,
        truncated=truncated,
    )


def related_hyperedges(snapshot: OntologySnapshot, hyperedge_id: str) -> list[HyperedgeSummary]:
    """Single-hop E_H out-neighbors; retired and unapproved neighbors are left out."""
    he = snapshot.hyperedges.get(hyperedge_id)
    if he is None:
        raise UnknownEntity(f"Unknown hyperedge '{hyperedge_id}'")
    related = []
    for other_id in sorted(set(he.related_hyperedges)):
        other = snapshot.hyperedges.get(other_id)
        if other is not None and other.lifecycle == Lifecycle.APPROVED:
            related.append(other.summary())
    return related
