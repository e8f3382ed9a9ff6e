# src/core/transforms.py - Join-key transforms for cross-system foreign keys
# A transform maps a source-side key value to its destination-side spelling.

import sqlite3
from dataclasses import dataclass
from typing import Optional

from ..models.ontology import TRANSFORM_PATTERN

# SQLite lower() only folds ASCII; join SQL calls this instead so both sides fold alike
SQL_CASEFOLD = "casefold"


@dataclass(frozen=True)
class Transform:
    kind: str
    width: Optional[int] = None
    text: Optional[str] = None

    def apply(self, value: object) -> Optional[str]:
        if value is None:
            return None
        value = str(value)
        if self.kind == "identity":
            return value
        if self.kind == "zero-pad":
            return value.rjust(self.width, "0")
        if self.kind == "strip-prefix":
            return value[len(self.text):] if value.startswith(self.text) else value
        if self.kind == "case-fold":
            return value.casefold()
        raise ValueError(f"unsupported transform {self.kind}")

    def sql(self, column: str) -> str:
        """The same mapping expressed over a SQLite column, for reverse traversal and reference joins."""
        if self.kind == "identity":
            return f"CAST({column} AS TEXT)"
        if self.kind == "zero-pad":
            w = self.width
            return (
                f"CASE WHEN length({column}) >= {w} THEN CAST({column} AS TEXT) "
                f"ELSE substr('{'0' * w}' || {column}, -{w}, {w}) END"
            )
        if self.kind == "strip-prefix":
            n = len(self.text)
            literal = self.text.replace("'", "''")
            return f"CASE WHEN substr({column}, 1, {n}) = '{literal}' THEN substr({column}, {n + 1}) ELSE {column} END"
        if self.kind == "case-fold":
            return f"{SQL_CASEFOLD}({column})"
        raise ValueError(f"unsupported transform {self.kind}")

    def __str__(self) -> str:
        if self.kind == "zero-pad":
            return f"zero-pad({self.width})"
        if self.kind == "strip-prefix":
            return f"strip-prefix({self.text})"
        return self.kind


def parse_transform(spec: str) -> Transform:
    match = TRANSFORM_PATTERN.match(spec)
    if not match:
        raise ValueError(f"unknown transform '{spec}'")
    if match.group(2) is not None:
        return Transform("zero-pad", width=int(match.group(2)))
    if match.group(3) is not None:
        return Transform("strip-prefix", text=match.group(3))
    return Transform(match.group(1))


def prepend(prefix: str, value: str) -> str:
    """Inverse of strip-prefix on values that carried the prefix."""
    return f"{prefix}{value}"


def _casefold(value: object) -> Optional[str]:
    return None if value is None else str(value).casefold()


def register_sql_functions(connection: sqlite3.Connection) -> sqlite3.Connection:
    """Every connection that evaluates Transform.sql() needs these."""
    connection.create_function(SQL_CASEFOLD, 1, _casefold, deterministic=True)
    return connection
