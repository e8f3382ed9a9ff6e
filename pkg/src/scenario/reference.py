# src/scenario/reference.py - Read access to the merged reference store
# Ground truth is computed here and only here; engine outputs never feed back into it.

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterator

import sqlite3

from ..core.substrate import SnapshotMerger, merged_table, quote_ident

if TYPE_CHECKING:
    from .generator import TableSpec


@dataclass
class MergedView:
    connection: sqlite3.Connection
    tables: dict[str, "TableSpec"]
    cache: dict[str, list[dict[str, Any]]] = field(default_factory=dict)

    def rows(self, node_id: str) -> list[dict[str, Any]]:
        """All rows of a planned table as dicts; an unplanned table reads as empty."""
        if node_id not in self.tables:
            return []
        if node_id not in self.cache:
            spec = self.tables[node_id]
            cursor = self.connection.execute(f"SELECT * FROM {quote_ident(merged_table(spec.system, spec.physical))}")
            names = [d[0] for d in cursor.description]
            self.cache[node_id] = [dict(zip(names, r)) for r in cursor.fetchall()]
        return self.cache[node_id]


@contextmanager
def merged_view(sources: dict[str, Path], tables: dict[str, "TableSpec"]) -> Iterator[MergedView]:
    connection = SnapshotMerger(sources).merge()
    try:
        yield MergedView(connection, tables)
    finally:
        connection.close()
