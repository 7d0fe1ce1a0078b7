"""Read-only handles over exported course data.

A handle wraps an in-memory SQLite database loaded from any of the three
published layouts: a single SQLite store file, a CSV store directory
(meta.csv + one CSV per table), or a partition directory (manifest.json +
per-course table CSVs). Timestamps are normalized to ISO-8601 Z text so SQL
comparisons are chronological; booleans become 0/1 integers.

The table layout comes from the schema descriptor shipped with the query
repository (a copy is bundled); this package never imports the producing
toolkit.
"""
from __future__ import annotations

import csv
import json
import sqlite3
from datetime import datetime, timezone
from importlib import resources as importlib_resources
from pathlib import Path


class StoreOpenError(Exception):
    """The path is not a readable store or partition."""


class AccessError(Exception):
    """The request needs a table this handle does not include."""


_SQL_TYPE = {"int": "INTEGER", "float": "REAL", "str": "TEXT", "bool": "INTEGER", "ts": "TEXT"}


def load_table_schema(path: str | Path | None = None) -> dict[str, list[tuple[str, str]]]:
    """Column (name, kind) pairs per table, from a schema.json descriptor."""
    if path is None:
        text = importlib_resources.files("moocaccess").joinpath("data/schema.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return {name: [(c, k) for c, k in cols] for name, cols in doc["tables"].items()}


def _format_ts(ms: int) -> str:
    dt = datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + ".%03dZ" % (ms % 1000)


def _decode_csv(value: str, kind: str):
    nullable = kind.endswith("?")
    base = kind.rstrip("?")
    if value == "" and (nullable or base == "ts"):
        return None
    if base == "int":
        return int(value)
    if base == "float":
        return float(value)
    if base == "bool":
        return 1 if value in ("1", "true", "True") else 0
    return value  # str and ts stay text; ts is already ISO-8601 Z


class StoreHandle:
    """Read-only view over one opened store or partition."""

    def __init__(self, conn: sqlite3.Connection, tables: list[str], courses: list[str],
                 manifest: dict | None = None):
        self.conn = conn
        self.tables = tuple(sorted(tables))
        self.courses = list(courses)
        self.manifest = manifest

    def has(self, name: str) -> bool:
        return name in self.tables

    def require(self, names) -> None:
        missing = sorted(set(names) - set(self.tables))
        if missing:
            raise AccessError(f"tables not available in this handle: {', '.join(missing)}")

    def row_count(self, table: str) -> int:
        self.require([table])
        return self.conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]

    def close(self) -> None:
        self.conn.close()

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _new_db(schema, tables) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:")
    for table in tables:
        cols = ", ".join(f"{c} {_SQL_TYPE[k.rstrip('?')]}" for c, k in schema[table])
        conn.execute(f"CREATE TABLE {table} ({cols})")
    return conn


def _insert(conn, table, schema, rows) -> None:
    width = len(schema[table])
    conn.executemany(
        f"INSERT INTO {table} VALUES ({','.join('?' * width)})", rows
    )


def _load_csv_rows(path: Path, columns) -> list[tuple]:
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for record in reader:
                rows.append(tuple(_decode_csv(record[c], k) for c, k in columns))
    except (OSError, KeyError, ValueError) as exc:
        raise StoreOpenError(f"cannot read {path}: {exc}") from exc
    return rows


def _open_sqlite_store(path: Path, schema) -> StoreHandle:
    try:
        src = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
        meta = dict(src.execute("SELECT key, value FROM meta"))
    except sqlite3.Error as exc:
        raise StoreOpenError(f"not a store file: {path} ({exc})") from exc
    tables = [t for t in schema if t != "global_users"]
    conn = _new_db(schema, tables)
    try:
        for table in tables:
            columns = schema[table]
            try:
                cursor = src.execute(f"SELECT {', '.join(c for c, _ in columns)} FROM {table}")
            except sqlite3.Error as exc:
                raise StoreOpenError(f"store table {table} unreadable: {exc}") from exc
            rows = []
            for tup in cursor:
                rows.append(
                    tuple(
                        _format_ts(v) if v is not None and k.rstrip("?") == "ts" else v
                        for v, (_, k) in zip(tup, columns)
                    )
                )
            _insert(conn, table, schema, rows)
    finally:
        src.close()
    conn.commit()
    return StoreHandle(conn, tables, [meta.get("course_id", "")])


def _open_csv_store(path: Path, schema) -> StoreHandle:
    with open(path / "meta.csv", newline="", encoding="utf-8") as fh:
        meta = {row["key"]: row["value"] for row in csv.DictReader(fh)}
    tables = [t for t in schema if t != "global_users"]
    conn = _new_db(schema, tables)
    for table in tables:
        file = path / f"{table}.csv"
        if not file.is_file():
            raise StoreOpenError(f"missing table file: {file}")
        _insert(conn, table, schema, _load_csv_rows(file, schema[table]))
    conn.commit()
    return StoreHandle(conn, tables, [meta.get("course_id", "")])


def _open_partition(path: Path, schema) -> StoreHandle:
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        courses = manifest["courses"]
        included = manifest["included_tables"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise StoreOpenError(f"cannot read partition manifest under {path}: {exc}") from exc
    tables = [t for t in included if t in schema]
    conn = _new_db(schema, tables)
    for table in tables:
        if table == "global_users":
            _insert(conn, table, schema, _load_csv_rows(path / "global_users.csv", schema[table]))
            continue
        rows = []
        for course in courses:
            rows.extend(_load_csv_rows(path / course / f"{table}.csv", schema[table]))
        _insert(conn, table, schema, rows)
    conn.commit()
    return StoreHandle(conn, tables, courses, manifest=manifest)


def open_store(path, schema_path: str | Path | None = None) -> StoreHandle:
    """Open a store file, a CSV store directory, or a partition directory.

    The handle's capability set is exactly the tables present; partition
    directories must carry their manifest.
    """
    path = Path(path)
    schema = load_table_schema(schema_path)
    if path.is_dir():
        if (path / "manifest.json").is_file():
            return _open_partition(path, schema)
        if (path / "meta.csv").is_file():
            return _open_csv_store(path, schema)
        raise StoreOpenError(f"{path} has neither manifest.json nor meta.csv")
    if path.is_file():
        return _open_sqlite_store(path, schema)
    raise StoreOpenError(f"no store at {path}")
