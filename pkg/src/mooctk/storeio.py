"""Course store persistence: one SQLite file per course, or a directory of
per-table CSV files (UTF-8, RFC-4180). Both hold the same content and load
interchangeably."""
from __future__ import annotations

import csv
import io
import os
import sqlite3
from pathlib import Path

from .schema import TABLE_NAMES, TABLE_SPECS, CourseStore, decode_value, encode_value

_SQL_TYPES = {"int": "INTEGER", "float": "REAL", "str": "TEXT", "bool": "INTEGER", "ts": "INTEGER"}


class StoreIOError(Exception):
    """Store could not be read or written (distinct from validation failure)."""


def _sql_columns(table: str) -> str:
    cols = []
    for name, kind in TABLE_SPECS[table][1]:
        sql_type = _SQL_TYPES[kind.rstrip("?")]
        null = "" if kind.endswith("?") else " NOT NULL"
        cols.append(f"{name} {sql_type}{null}")
    return ", ".join(cols)


def save_sqlite(store: CourseStore, path: str | os.PathLike) -> None:
    path = Path(path)
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        conn.execute("PRAGMA journal_mode=OFF")
        conn.execute("CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT NOT NULL)")
        conn.executemany(
            "INSERT INTO meta VALUES (?, ?)",
            [("course_id", store.course_id), ("schema_version", store.schema_version)],
        )
        for table in TABLE_NAMES:
            conn.execute(f"CREATE TABLE {table} ({_sql_columns(table)})")
            spec = TABLE_SPECS[table][1]
            placeholders = ",".join("?" * len(spec))
            rows = (
                tuple(_to_sql(value, kind) for value, kind in zip(tup, (k for _, k in spec)))
                for tup in store.row_tuples(table)
            )
            conn.executemany(f"INSERT INTO {table} VALUES ({placeholders})", rows)
        conn.commit()
    finally:
        conn.close()


def _to_sql(value, kind: str):
    if value is None:
        return None
    if kind.rstrip("?") == "bool":
        return 1 if value else 0
    return value


def load_sqlite(path: str | os.PathLike) -> CourseStore:
    path = Path(path)
    if not path.is_file():
        raise StoreIOError(f"store file not found: {path}")
    try:
        conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise StoreIOError(f"cannot open store {path}: {exc}") from exc
    try:
        try:
            meta = dict(conn.execute("SELECT key, value FROM meta"))
        except sqlite3.Error as exc:
            raise StoreIOError(f"not a course store (no meta table): {path}") from exc
        store = CourseStore(
            course_id=meta.get("course_id", ""), schema_version=meta.get("schema_version", "")
        )
        for table in TABLE_NAMES:
            cls, spec = TABLE_SPECS[table]
            try:
                cursor = conn.execute(f"SELECT {', '.join(c for c, _ in spec)} FROM {table}")
            except sqlite3.Error as exc:
                raise StoreIOError(f"store table {table} unreadable: {exc}") from exc
            rows = store.table(table)
            for tup in cursor:
                values = [_from_sql(v, k) for v, (_, k) in zip(tup, spec)]
                rows.append(cls(*values))
        return store
    finally:
        conn.close()


def _from_sql(value, kind: str):
    if value is None:
        return None
    base = kind.rstrip("?")
    if base == "bool":
        return bool(value)
    if base == "float":
        return float(value)
    return value


def table_to_csv_bytes(store: CourseStore, table: str) -> bytes:
    spec = TABLE_SPECS[table][1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c for c, _ in spec])
    kinds = [k for _, k in spec]
    for tup in store.row_tuples(table):
        writer.writerow([encode_value(v, k) for v, k in zip(tup, kinds)])
    return buf.getvalue().encode("utf-8")


def save_csvdir(store: CourseStore, dirpath: str | os.PathLike) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    with open(dirpath / "meta.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerow(["course_id", store.course_id])
        writer.writerow(["schema_version", store.schema_version])
    for table in TABLE_NAMES:
        (dirpath / f"{table}.csv").write_bytes(table_to_csv_bytes(store, table))


def load_csv_table(path: Path, table: str) -> list:
    cls, spec = TABLE_SPECS[table]
    kinds = {c: k for c, k in spec}
    rows = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for record in reader:
                rows.append(cls(*(decode_value(record[c], kinds[c]) for c, _ in spec)))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise StoreIOError(f"cannot read table {table} from {path}: {exc}") from exc
    return rows


def load_csvdir(dirpath: str | os.PathLike) -> CourseStore:
    dirpath = Path(dirpath)
    meta_path = dirpath / "meta.csv"
    if not meta_path.is_file():
        raise StoreIOError(f"not a course store directory (no meta.csv): {dirpath}")
    try:
        with open(meta_path, encoding="utf-8", newline="") as fh:
            meta = {row["key"]: row["value"] for row in csv.DictReader(fh)}
    except (OSError, KeyError) as exc:
        raise StoreIOError(f"cannot read {meta_path}: {exc}") from exc
    store = CourseStore(
        course_id=meta.get("course_id", ""), schema_version=meta.get("schema_version", "")
    )
    for table in TABLE_NAMES:
        path = dirpath / f"{table}.csv"
        if not path.is_file():
            raise StoreIOError(f"missing table file: {path}")
        store.table(table).extend(load_csv_table(path, table))
    return store


def save_store(store: CourseStore, path: str | os.PathLike) -> None:
    """Persist to SQLite when the path looks like a file, else to a CSV dir."""
    path = Path(path)
    if path.suffix in (".db", ".sqlite", ".sqlite3"):
        save_sqlite(store, path)
    else:
        save_csvdir(store, path)


def load_store(path: str | os.PathLike) -> CourseStore:
    path = Path(path)
    if path.is_dir():
        return load_csvdir(path)
    return load_sqlite(path)


def stored_bytes(path: str | os.PathLike) -> int:
    """Total on-disk size of a store (file or directory)."""
    path = Path(path)
    if path.is_dir():
        return sum(p.stat().st_size for p in path.rglob("*") if p.is_file())
    return path.stat().st_size
