# src/core/substrate.py - Permission-guarded access to read-only relational snapshot stores
# Direct queries run a node's template (or an authorized read-only statement); topology queries
# propagate join keys hop by hop along a breadth-first plan over the binary edges.

import logging
import sqlite3
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional

import networkx as nx

from ..models.access import (
    ColumnSpec, Constraint, DataSource, EvidenceArtifact, FederatedResult, HopResult, Principal,
    Provenance, QueryResult,
)
from ..models.ontology import BinaryEdge, GraphNode, ValueKind
from ..utils.digests import canonical_json, digest_value
from .artifacts import ArtifactStore, read_artifact
from .errors import (
    AccessDenied, DisconnectedSubset, HopExecutionError, KeyPropagationOverflow, QueryExecutionError,
    SourceError, UnboundPlaceholder, UnknownEntity,
)
from .ontology import OntologySnapshot, OntologyStore
from .transforms import parse_transform, register_sql_functions

logger = logging.getLogger(__name__)

# --- Configuration ---
PERSIST_ROW_THRESHOLD = 200
PERSIST_BYTE_THRESHOLD = 16 * 1024
KEY_BATCH_SIZE = 500
KEY_PROPAGATION_CAP = 50_000
READ_ONLY_PREFIXES = ("select", "with")

_ALLOWED_ACTIONS = {
    sqlite3.SQLITE_SELECT,
    sqlite3.SQLITE_READ,
    sqlite3.SQLITE_FUNCTION,
    getattr(sqlite3, "SQLITE_RECURSIVE", 33),
}


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _key_text(value: Any) -> Optional[str]:
    return None if value is None else str(value)


@dataclass
class SourceHandle:
    """An open read-only connection to one snapshot store."""

    descriptor: DataSource
    connection: sqlite3.Connection
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def source_id(self) -> str:
        return self.descriptor.source_id

    def close(self) -> None:
        self.connection.close()


def open_read_only(path: Path) -> sqlite3.Connection:
    uri = f"{Path(path).resolve().as_uri()}?mode=ro"
    return register_sql_functions(sqlite3.connect(uri, uri=True, check_same_thread=False))


@dataclass(frozen=True)
class HopPlan:
    """Breadth-first order over the induced binary-edge subgraph, anchored at one node."""

    anchor: str
    order: tuple[str, ...]
    tree: tuple[tuple[str, str, str], ...]  # (parent, child, edge id)


def plan_hops(snapshot: OntologySnapshot, node_subset: Iterable[str], constraints: Iterable[Constraint]) -> HopPlan:
    """Connectivity precheck plus deterministic traversal order. Touches no data."""
    subset = sorted(set(node_subset))
    if not subset:
        raise QueryExecutionError("node_subset must not be empty")
    for node_id in subset:
        if node_id not in snapshot.nodes:
            raise UnknownEntity(f"Unknown graph node '{node_id}'")
    constrained = sorted({c.node_id for c in constraints})
    for node_id in constrained:
        if node_id not in subset:
            raise QueryExecutionError(f"Constraint references node '{node_id}' outside the subset")

    induced = nx.Graph()
    induced.add_nodes_from(subset)
    for edge in snapshot.edges.values():
        if edge.src in induced and edge.dst in induced and edge.src != edge.dst:
            existing = induced.get_edge_data(edge.src, edge.dst)
            if existing is None or edge.id < existing["edge_id"]:
                induced.add_edge(edge.src, edge.dst, edge_id=edge.id)

    anchor = constrained[0] if constrained else subset[0]
    reachable = nx.node_connected_component(induced, anchor)
    if len(reachable) != len(subset):
        missing = sorted(set(subset) - reachable)
        raise DisconnectedSubset(
            f"Node subset is not connected by binary edges; unreachable from {anchor}: {', '.join(missing)}",
            {"anchor": anchor, "unreachable": missing},
        )

    tree = tuple(
        (parent, child, induced.edges[parent, child]["edge_id"])
        for parent, child in nx.bfs_edges(induced, anchor, sort_neighbors=sorted)
    )
    order = (anchor, *(child for _, child, _ in tree))
    return HopPlan(anchor=anchor, order=order, tree=tree)


class Substrate:
    """Registered snapshot stores plus the single access path every physical query goes through."""

    def __init__(self, store: OntologyStore, artifact_root: Path,
                 persist_rows: int = PERSIST_ROW_THRESHOLD, persist_bytes: int = PERSIST_BYTE_THRESHOLD,
                 key_batch: int = KEY_BATCH_SIZE, key_cap: int = KEY_PROPAGATION_CAP):
        self.store = store
        self.artifact_root = Path(artifact_root)
        self.persist_rows = persist_rows
        self.persist_bytes = persist_bytes
        self.key_batch = key_batch
        self.key_cap = key_cap
        self.sources: dict[str, SourceHandle] = {}
        self.access_counts: Counter[str] = Counter()
        self._artifact_stores: dict[str, ArtifactStore] = {}
        self._registry_lock = threading.Lock()

    # --- Sources ---

    def register_source(self, descriptor: DataSource) -> SourceHandle:
        with self._registry_lock:
            if descriptor.source_id in self.sources:
                raise SourceError(f"Data source '{descriptor.source_id}' is already registered",
                                  {"source_id": descriptor.source_id})
            path = Path(descriptor.location)
            if not path.is_file():
                raise SourceError(f"Data source '{descriptor.source_id}' cannot be opened: no file at {path}",
                                  {"source_id": descriptor.source_id, "cause": "missing file"})
            try:
                connection = open_read_only(path)
                connection.execute("SELECT count(*) FROM sqlite_master").fetchone()
            except sqlite3.Error as e:
                logger.error(f"Source Registration: cannot open {path} as '{descriptor.source_id}': {e}")
                raise SourceError(f"Data source '{descriptor.source_id}' cannot be opened: {e}",
                                  {"source_id": descriptor.source_id, "cause": str(e)})
            handle = SourceHandle(descriptor=descriptor, connection=connection)
            self.sources[descriptor.source_id] = handle
            logger.info(f"Source Registration: '{descriptor.source_id}' opened read-only from {path}")
            return handle

    def close(self) -> None:
        for handle in self.sources.values():
            handle.close()
        self.sources.clear()

    def artifacts(self, session_id: str) -> ArtifactStore:
        store = self._artifact_stores.get(session_id)
        if store is None:
            store = self._artifact_stores[session_id] = ArtifactStore(self.artifact_root, session_id)
        return store

    def release_session(self, session_id: str) -> None:
        """Forgets the session's artifact counter; a rerun of the same session id numbers from a0001 again."""
        self._artifact_stores.pop(session_id, None)

    def read_artifact(self, artifact_id: str) -> tuple[bytes, EvidenceArtifact, dict[str, Any]]:
        return read_artifact(self.artifact_root, artifact_id)

    # --- Access path ---

    def _handle_for(self, principal: Principal, node: GraphNode) -> SourceHandle:
        handle = self.sources.get(node.source)
        if handle is None:
            raise SourceError(f"No data source registered for '{node.source}'", {"source_id": node.source})
        if not principal.can_read(node.source):
            logger.warning(f"Access Check: principal '{principal.principal_id}' denied source '{node.source}'")
            raise AccessDenied(
                f"Principal '{principal.principal_id}' is not authorized for source '{node.source}'",
                {"principal": principal.principal_id, "source_id": node.source},
            )
        return handle

    def _execute(self, handle: SourceHandle, sql: str, params: Any, authorizer=None) -> tuple[list[str], list[list]]:
        """Runs one physical query. Every read in the system passes here."""
        with handle.lock:
            self.access_counts[handle.source_id] += 1
            handle.connection.set_authorizer(authorizer or self._read_only_authorizer)
            try:
                cursor = handle.connection.execute(sql, params)
                columns = [d[0] for d in cursor.description or ()]
                rows = [list(r) for r in cursor.fetchall()]
            finally:
                handle.connection.set_authorizer(None)
        return columns, rows

    @staticmethod
    def _read_only_authorizer(action, arg1, arg2, db_name, trigger):
        return sqlite3.SQLITE_OK if action in _ALLOWED_ACTIONS else sqlite3.SQLITE_DENY

    @staticmethod
    def _statement_authorizer(node: GraphNode, principal: Principal):
        hidden = {f.name for f in node.schema_ if f.visibility_tier > principal.max_visibility_tier}

        def authorize(action, arg1, arg2, db_name, trigger):
            if action not in _ALLOWED_ACTIONS:
                return sqlite3.SQLITE_DENY
            if action == sqlite3.SQLITE_READ:
                if arg1 != node.table:
                    return sqlite3.SQLITE_DENY
                if arg2 in hidden:
                    return sqlite3.SQLITE_IGNORE
            return sqlite3.SQLITE_OK

        return authorize

    # --- Packaging ---

    def _columns(self, node: Optional[GraphNode], names: list[str]) -> list[ColumnSpec]:
        specs = []
        for name in names:
            spec = node.field(name) if node is not None else None
            specs.append(ColumnSpec(name=name, value_kind=spec.value_kind if spec else ValueKind.FREE_TEXT))
        return specs

    def _package(self, columns: list[ColumnSpec], rows: list[list], provenance: Provenance,
                 redactions: list[str], session_id: str, producer: str) -> QueryResult:
        size = len(canonical_json(rows).encode("utf-8"))
        if len(rows) > self.persist_rows or size > self.persist_bytes:
            artifact = self.artifacts(session_id).persist(
                rows, producer, [provenance], header={"columns": [c.model_dump(mode="json") for c in columns]},
            )
            return QueryResult(columns=columns, artifact_ref=artifact.artifact_id, row_count=len(rows),
                               provenance=provenance, redactions=redactions)
        return QueryResult(columns=columns, rows=rows, row_count=len(rows), provenance=provenance,
                           redactions=redactions)

    @staticmethod
    def _redact(node: GraphNode, principal: Principal, names: list[str], rows: list[list],
                prefix: str = "") -> tuple[list[str], list[list], list[str]]:
        hidden = {f"{prefix}{f.name}" for f in node.schema_ if f.visibility_tier > principal.max_visibility_tier}
        keep = [i for i, n in enumerate(names) if n not in hidden]
        redactions = [n for n in names if n in hidden]
        return [names[i] for i in keep], [[row[i] for i in keep] for row in rows], redactions

    # --- Direct query ---

    def direct_query(self, principal: Principal, node_id: str, parameters: Optional[dict[str, Any]] = None,
                     statement: Optional[str] = None, session_id: str = "default") -> QueryResult:
        snapshot = self.store.snapshot
        node = snapshot.nodes.get(node_id)
        if node is None:
            raise UnknownEntity(f"Unknown graph node '{node_id}'")
        handle = self._handle_for(principal, node)
        parameters = dict(parameters or {})

        if statement is not None:
            sql = statement.strip().rstrip(";")
            if not sql.lower().startswith(READ_ONLY_PREFIXES):
                raise AccessDenied("Only read-only SELECT statements are permitted", {"query": statement})
            authorizer = self._statement_authorizer(node, principal)
            bound = parameters
        else:
            sql, bound = self._bind_template(node, parameters)
            authorizer = None

        logger.info(f"Direct Query (Session: {session_id}): {node_id} on {node.source} with {bound}")
        try:
            names, rows = self._execute(handle, sql, bound, authorizer)
        except sqlite3.DatabaseError as e:
            if "not authorized" in str(e):
                raise AccessDenied(f"Statement reads outside node '{node_id}': {e}", {"query": sql})
            logger.error(f"Direct Query (Session: {session_id}): failed on {node_id}: {e}")
            raise QueryExecutionError(f"Query on '{node_id}' failed: {e}", {"query": sql})

        names, rows, redactions = self._redact(node, principal, names, rows)
        provenance = Provenance(
            source_id=node.source, node_id=node_id, query=sql, parameters=bound, timestamp=_now(),
            result_digest=digest_value({"columns": names, "rows": rows}),
        )
        return self._package(self._columns(node, names), rows, provenance, redactions, session_id, "data_direct_query")

    def _bind_template(self, node: GraphNode, parameters: dict[str, Any]) -> tuple[str, dict[str, Any]]:
        base = node.query_template.strip().rstrip(";") or f"SELECT * FROM {quote_ident(node.table)}"
        placeholders = node.placeholders()
        missing = [p for p in placeholders if p not in parameters]
        if missing:
            raise UnboundPlaceholder(
                f"Query template of '{node.id}' has unbound placeholders: {', '.join(missing)}",
                {"node_id": node.id, "missing": missing},
            )
        bound = {p: parameters[p] for p in placeholders}
        filters = []
        for name in sorted(set(parameters) - set(placeholders)):
            if node.field(name) is None:
                raise QueryExecutionError(f"Parameter '{name}' names no field of '{node.id}'",
                                          {"node_id": node.id, "parameter": name})
            key = f"f_{name}"
            filters.append(f"CAST({quote_ident(name)} AS TEXT) = CAST(:{key} AS TEXT)")
            bound[key] = parameters[name]
        if filters:
            base = f"SELECT * FROM ({base}) AS q WHERE {' AND '.join(filters)}"
        return base, bound

    # --- Topology query ---

    def topology_query(self, principal: Principal, node_subset: list[str], constraints: list[Constraint],
                       session_id: str = "default") -> FederatedResult:
        snapshot = self.store.snapshot
        plan = plan_hops(snapshot, node_subset, constraints)
        handles = {n: self._handle_for(principal, snapshot.nodes[n]) for n in plan.order}
        by_node: dict[str, list[Constraint]] = defaultdict(list)
        for c in constraints:
            node = snapshot.nodes[c.node_id]
            if node.field(c.field) is None:
                raise QueryExecutionError(f"Constraint field '{c.field}' absent from '{c.node_id}' schema")
            by_node[c.node_id].append(c)
        logger.info(f"Topology Query (Session: {session_id}): order {' -> '.join(plan.order)}")

        raw: dict[str, tuple[list[str], list[list], str]] = {}
        keys_sent: dict[str, int] = {plan.anchor: 0}
        executed: list[str] = []
        try:
            anchor = snapshot.nodes[plan.anchor]
            sql, params = self._hop_sql(anchor, by_node[plan.anchor], None, [])
            names, rows = self._execute(handles[plan.anchor], sql, params)
            raw[plan.anchor] = (names, rows, sql)
            executed.append(plan.anchor)

            for parent_id, child_id, edge_id in plan.tree:
                edge = snapshot.edges[edge_id]
                parent_names, parent_rows, _ = raw[parent_id]
                keys = self._outgoing_keys(edge, parent_id, parent_names, parent_rows)
                if len(keys) > self.key_cap:
                    raise KeyPropagationOverflow(
                        f"Propagating {len(keys)} keys from {parent_id} to {child_id} exceeds the cap of {self.key_cap}",
                        {"from": parent_id, "to": child_id, "keys": len(keys), "executed_hops": list(executed)},
                    )
                keys_sent[child_id] = len(keys)
                child = snapshot.nodes[child_id]
                names, rows, sql = None, [], ""
                for start in range(0, max(len(keys), 1), self.key_batch):
                    batch = keys[start:start + self.key_batch]
                    if not batch:
                        break
                    sql, params = self._hop_sql(child, by_node[child_id], (edge, parent_id), batch)
                    batch_names, batch_rows = self._execute(handles[child_id], sql, params)
                    names = batch_names
                    rows.extend(batch_rows)
                if names is None:
                    names = self._table_columns(handles[child_id], child)
                    sql = sql or f"-- no keys propagated from {parent_id}"
                raw[child_id] = (names, rows, sql)
                executed.append(child_id)
        except sqlite3.Error as e:
            failed = plan.order[len(executed)] if len(executed) < len(plan.order) else None
            logger.error(f"Topology Query (Session: {session_id}): hop {failed} failed: {e}")
            raise HopExecutionError(f"Hop on '{failed}' failed: {e}", {"failed_hop": failed, "executed_hops": executed})

        hops = []
        parents = {child: (parent, edge_id) for parent, child, edge_id in plan.tree}
        for node_id in plan.order:
            node = snapshot.nodes[node_id]
            names, rows, sql = raw[node_id]
            kept, kept_rows, redactions = self._redact(node, principal, names, rows)
            provenance = Provenance(
                source_id=node.source, node_id=node_id, query=sql, timestamp=_now(),
                parameters={c.field: c.value for c in by_node[node_id]},
                result_digest=digest_value({"columns": kept, "rows": kept_rows}),
            )
            parent, edge_id = parents.get(node_id, (None, None))
            hops.append(HopResult(
                node_id=node_id, via_edge=edge_id, parent=parent, keys_propagated=keys_sent.get(node_id, 0),
                result=self._package(self._columns(node, kept), kept_rows, provenance, redactions,
                                     session_id, "data_topology_query"),
            ))

        joined_names, joined_rows = self._join(snapshot, plan, raw)
        hidden = []
        for node_id in plan.order:
            node = snapshot.nodes[node_id]
            hidden += [f"{node_id}.{f.name}" for f in node.schema_ if f.visibility_tier > principal.max_visibility_tier]
        keep = [i for i, n in enumerate(joined_names) if n not in hidden]
        redactions = [n for n in joined_names if n in hidden]
        joined_names = [joined_names[i] for i in keep]
        joined_rows = [[row[i] for i in keep] for row in joined_rows]
        columns = []
        for name in joined_names:
            node_id, _, field_name = name.rpartition(".")
            spec = snapshot.nodes[node_id].field(field_name)
            columns.append(ColumnSpec(name=name, value_kind=spec.value_kind if spec else ValueKind.FREE_TEXT))
        provenance = Provenance(
            source_id="+".join(sorted({snapshot.nodes[n].source for n in plan.order})),
            node_id=",".join(plan.order),
            query=" ; ".join(raw[n][2] for n in plan.order),
            parameters={f"{c.node_id}.{c.field}": c.value for c in constraints},
            timestamp=_now(),
            result_digest=digest_value({"columns": joined_names, "rows": joined_rows}),
        )
        joined = self._package(columns, joined_rows, provenance, redactions, session_id, "data_topology_query")
        logger.info(f"Topology Query (Session: {session_id}): {joined.row_count} joined rows over {len(plan.order)} hops")
        return FederatedResult(order=list(plan.order), hops=hops, joined=joined)

    def _table_columns(self, handle: SourceHandle, node: GraphNode) -> list[str]:
        names, _ = self._execute(handle, f"SELECT * FROM {quote_ident(node.table)} LIMIT 0", {})
        return names

    def _hop_sql(self, node: GraphNode, constraints: list[Constraint], incoming: Optional[tuple[BinaryEdge, str]],
                 keys: list[tuple]) -> tuple[str, list[Any]]:
        where, params = [], []
        for c in constraints:
            where.append(f"CAST({quote_ident(c.field)} AS TEXT) = ?")
            params.append(_key_text(c.value))
        if incoming is not None:
            edge, parent_id = incoming
            if edge.src == parent_id:
                # forward: child holds dst fields in their stored spelling
                exprs = [f"CAST({quote_ident(t.dst_field)} AS TEXT)" for t in edge.join_spec]
            else:
                # reverse: child holds src fields; map them forward inside SQL
                exprs = [parse_transform(t.transform).sql(quote_ident(t.src_field)) for t in edge.join_spec]
            if len(exprs) == 1:
                where.append(f"{exprs[0]} IN ({', '.join('?' for _ in keys)})")
                params.extend(k[0] for k in keys)
            else:
                tuple_marks = ", ".join("(" + ", ".join("?" for _ in exprs) + ")" for _ in keys)
                where.append(f"({', '.join(exprs)}) IN (VALUES {tuple_marks})")
                for k in keys:
                    params.extend(k)
        sql = f"SELECT * FROM {quote_ident(node.table)}"
        if where:
            sql += " WHERE " + " AND ".join(where)
        return sql, params

    @staticmethod
    def _edge_key(edge: BinaryEdge, side: str, names: list[str], row: list) -> Optional[tuple]:
        """Join key of a row in destination spelling. side is 'src' or 'dst'."""
        index = {n: i for i, n in enumerate(names)}
        parts = []
        for t in edge.join_spec:
            if side == "src":
                value = parse_transform(t.transform).apply(row[index[t.src_field]])
            else:
                value = _key_text(row[index[t.dst_field]])
            if value is None:
                return None
            parts.append(value)
        return tuple(parts)

    def _outgoing_keys(self, edge: BinaryEdge, parent_id: str, names: list[str], rows: list[list]) -> list[tuple]:
        side = "src" if edge.src == parent_id else "dst"
        keys = {self._edge_key(edge, side, names, row) for row in rows}
        keys.discard(None)
        return sorted(keys)

    def _join(self, snapshot: OntologySnapshot, plan: HopPlan,
              raw: dict[str, tuple[list[str], list[list], str]]) -> tuple[list[str], list[list]]:
        """Inner join of hop rows along the traversal tree; columns named '<node>.<field>'."""
        anchor_names, anchor_rows, _ = raw[plan.anchor]
        columns = [f"{plan.anchor}.{n}" for n in anchor_names]
        partial = [{plan.anchor: row} for row in anchor_rows]
        for parent_id, child_id, edge_id in plan.tree:
            edge = snapshot.edges[edge_id]
            child_names, child_rows, _ = raw[child_id]
            parent_names = raw[parent_id][0]
            parent_side, child_side = ("src", "dst") if edge.src == parent_id else ("dst", "src")
            index: dict[tuple, list[list]] = defaultdict(list)
            for row in child_rows:
                key = self._edge_key(edge, child_side, child_names, row)
                if key is not None:
                    index[key].append(row)
            joined = []
            for combo in partial:
                key = self._edge_key(edge, parent_side, parent_names, combo[parent_id])
                if key is None:
                    continue
                for match in index.get(key, ()):
                    joined.append({**combo, child_id: match})
            partial = joined
            columns += [f"{child_id}.{n}" for n in child_names]
        rows = [[value for node_id in plan.order for value in combo[node_id]] for combo in partial]
        return columns, rows


# --- Reference store ---

def merged_table(source_id: str, table: str) -> str:
    return f"{source_id.lower()}__{table}"


class SnapshotMerger:
    """Copies every registered store into one in-memory database for reference joins and ground truth."""

    def __init__(self, sources: dict[str, Path]):
        self.sources = dict(sorted(sources.items()))

    def merge(self) -> sqlite3.Connection:
        # uri=True so ATTACH honours mode=ro
        merged = register_sql_functions(
            sqlite3.connect("file:reference?mode=memory", uri=True, check_same_thread=False))
        for source_id, path in self.sources.items():
            alias = f"src_{source_id.lower()}"
            merged.execute(f"ATTACH DATABASE ? AS {alias}", (f"{Path(path).resolve().as_uri()}?mode=ro",))
            tables = [r[0] for r in merged.execute(
                f"SELECT name FROM {alias}.sqlite_master WHERE type = 'table' ORDER BY name")]
            for table in tables:
                merged.execute(
                    f"CREATE TABLE {quote_ident(merged_table(source_id, table))} AS "
                    f"SELECT * FROM {alias}.{quote_ident(table)}"
                )
            merged.commit()
            merged.execute(f"DETACH DATABASE {alias}")
        logger.info(f"Snapshot Merge: merged {len(self.sources)} sources into one reference store")
        return merged


def reference_join_sql(snapshot: OntologySnapshot, node_subset: list[str],
                       constraints: list[Constraint]) -> tuple[str, list[Any], list[str]]:
    """One explicit SQL join over a merged store, equivalent to topology_query's joined rows."""
    plan = plan_hops(snapshot, node_subset, constraints)
    alias = {node_id: f"t{i}" for i, node_id in enumerate(plan.order)}
    selects: list[str] = []
    labels: list[str] = []
    for node_id in plan.order:
        node = snapshot.nodes[node_id]
        for name in node.field_names():
            selects.append(f"{alias[node_id]}.{quote_ident(name)}")
            labels.append(f"{node_id}.{name}")
    anchor = snapshot.nodes[plan.anchor]
    sql = f"SELECT {', '.join(selects)} FROM {quote_ident(merged_table(anchor.source, anchor.table))} {alias[plan.anchor]}"
    for parent_id, child_id, edge_id in plan.tree:
        edge = snapshot.edges[edge_id]
        child = snapshot.nodes[child_id]
        src_alias, dst_alias = (alias[parent_id], alias[child_id]) if edge.src == parent_id else (alias[child_id], alias[parent_id])
        conditions = [
            f"{parse_transform(t.transform).sql(f'{src_alias}.{quote_ident(t.src_field)}')} = "
            f"CAST({dst_alias}.{quote_ident(t.dst_field)} AS TEXT)"
            for t in edge.join_spec
        ]
        sql += (f" JOIN {quote_ident(merged_table(child.source, child.table))} {alias[child_id]}"
                f" ON {' AND '.join(conditions)}")
    params: list[Any] = []
    if constraints:
        sql += " WHERE " + " AND ".join(
            f"CAST({alias[c.node_id]}.{quote_ident(c.field)} AS TEXT) = ?" for c in constraints
        )
        params = [_key_text(c.value) for c in constraints]
    return sql, params, labels
