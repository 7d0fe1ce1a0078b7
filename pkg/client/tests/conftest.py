from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

import pytest

from moocaccess import load_queries

REPO_ROOT = Path(__file__).resolve().parents[2]
SECRET_KEY = "0123456789abcdef0123456789abcdef"


def _run_pipeline(*argv, cwd=None):
    """Drive the producing pipeline through its CLI; the client package itself
    never imports it."""
    env = dict(os.environ, MOOCTK_SECRET_KEY=SECRET_KEY)
    return subprocess.run(
        [sys.executable, "-m", "mooctk.cli", *map(str, argv)],
        capture_output=True,
        text=True,
        env=env,
        cwd=cwd,
    )


def _run_pipeline_ok(*argv, cwd=None) -> str:
    proc = _run_pipeline(*argv, cwd=cwd)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


@pytest.fixture(scope="session")
def cli():
    return _run_pipeline


@pytest.fixture(scope="session")
def cli_ok():
    return _run_pipeline_ok


@pytest.fixture(scope="session")
def queries_dir() -> Path:
    return REPO_ROOT / "queries"


@pytest.fixture(scope="session")
def queries(queries_dir):
    return load_queries(queries_dir)


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """One generated course, ingested to both store formats, plus partitions."""
    root = tmp_path_factory.mktemp("client-ws")
    _run_pipeline_ok("gen", "--seed", "7", "--users", "40", "--weeks", "2",
                     "--out", root / "corpus")
    for out in ("store.db", "store_csv"):
        _run_pipeline_ok(
            "ingest", "--in", root / "corpus" / "raw_events.jsonl",
            "--structure", root / "corpus" / "structure.json",
            "--roster", root / "corpus" / "roster.json",
            "--out", root / out,
        )
    _run_pipeline_ok(
        "partition", "--in", root / "store.db", "--level", "table_level",
        "--no-collaboration", "--out", root / "part_tl",
    )
    _run_pipeline_ok(
        "partition", "--in", root / "store.db", "--level", "single_course",
        "--with-collaboration", "--out", root / "part_sc",
    )
    return root


@pytest.fixture(scope="session")
def empty_store(tmp_path_factory):
    """A store with every queryable table empty: empty log, bare structure."""
    root = tmp_path_factory.mktemp("client-empty")
    (root / "empty.jsonl").write_text("")
    (root / "structure.json").write_text(
        '{"course_id": "empty", "resources": [], "problems": [], "surveys": []}'
    )
    _run_pipeline_ok(
        "ingest", "--in", root / "empty.jsonl",
        "--structure", root / "structure.json",
        "--out", root / "store.db",
    )
    return root / "store.db"
