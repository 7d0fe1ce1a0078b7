"""Named queries from the shared repository: load, check, run, render.

Query files are declarative JSON (name, params, SQL, required tables) kept in
one directory versioned together with the table schema, so every client shares
a single source of truth with the producing pipeline.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .store import AccessError, StoreHandle, load_table_schema


class ParameterError(ValueError):
    """Wrong parameter names or arity for a named query."""


class QueryRepositoryError(Exception):
    pass


@dataclass(frozen=True)
class NamedQuery:
    name: str
    description: str
    params: tuple[str, ...]
    required_tables: tuple[str, ...]
    sql: str
    render: str = "stat"  # "stat" (group,value,n) or "table" (raw dump)
    equivalent: dict = field(default_factory=dict)
    schema_version: str = ""


def load_queries(queries_dir) -> dict[str, NamedQuery]:
    queries_dir = Path(queries_dir)
    if not queries_dir.is_dir():
        raise QueryRepositoryError(f"no query repository at {queries_dir}")
    out: dict[str, NamedQuery] = {}
    for path in sorted(queries_dir.glob("*.json")):
        if path.name == "schema.json":
            continue
        try:
            doc = json.loads(path.read_text())
            query = NamedQuery(
                name=doc["name"],
                description=doc.get("description", ""),
                params=tuple(doc.get("params", [])),
                required_tables=tuple(doc.get("required_tables", [])),
                sql=doc["sql"],
                render=doc.get("render", "stat"),
                equivalent=doc.get("equivalent", {}),
                schema_version=doc.get("schema_version", ""),
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise QueryRepositoryError(f"bad query file {path}: {exc}") from exc
        out[query.name] = query
    return out


def run_query(handle: StoreHandle, query: NamedQuery, params: dict | None = None) -> list[tuple]:
    """Execute a named query; returns plain row tuples.

    Raises AccessError when the handle lacks a required table and
    ParameterError when the parameters do not match the declaration.
    """
    handle.require(query.required_tables)
    params = dict(params or {})
    declared = set(query.params)
    if set(params) != declared:
        raise ParameterError(
            f"query {query.name} takes parameters ({', '.join(query.params)}); "
            f"got ({', '.join(sorted(params))})"
        )
    cursor = handle.conn.execute(query.sql, params)
    return cursor.fetchall()


def format_stat_value(value) -> str:
    """Canonical statistic rendering: integral numbers as digits, other floats
    in shortest round-trip form. Mirrors the pipeline's output contract."""
    if value is None:
        return ""
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def format_table_value(value, kind: str) -> str:
    """Wire encoding used by table dumps (None empty, floats via repr)."""
    if value is None:
        return ""
    if kind.rstrip("?") == "float":
        return repr(float(value))
    return str(value)


def render_csv(query: NamedQuery, rows: list[tuple], schema_path=None) -> str:
    """Render rows the way the producing pipeline writes the same request."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if query.render == "stat":
        writer.writerow(["group", "value", "n"])
        for group, value, n in rows:
            writer.writerow([group, format_stat_value(value), n])
        return buf.getvalue()
    table = query.equivalent.get("table")
    columns = load_table_schema(schema_path)[table]
    writer.writerow([c for c, _ in columns])
    for row in rows:
        writer.writerow([format_table_value(v, k) for v, (_, k) in zip(row, columns)])
    return buf.getvalue()
