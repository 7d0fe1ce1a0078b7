"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s``. The large corpora are
generated once per session; the whole module is designed to finish on a
laptop in well under two minutes.
"""
from __future__ import annotations

import contextlib
import json
import os
import random
import subprocess
import sys
import time

import pytest

from mooctk import synthgen
from mooctk.analytics import TableView, compute_statistic, resolve_problem, video_homework_correlation
from mooctk.exports import export_bkt, export_irt
from mooctk.privacy import ACCESS_LEVELS, IdentityLedger, audit_linkability, export_partition
from mooctk.trees import number_problem_tree, reconstruct_problem_tree, reconstruct_thread, same_topology

from .conftest import SECRET_KEY, ingest_corpus
from .oracles import brute_force_statistic, random_forum, random_problem_tree
from .test_analytics import assert_rows_match, build_correlation_store, random_stat_and_cuts
from .test_exports import parse_csv_body
from .test_privacy import GOLDEN_MANIFESTS, collect_exported_fields
from .test_trees import make_thread_rows


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name}")


@pytest.fixture(scope="module")
def corpus10k(tmp_path_factory):
    spec = synthgen.GenSpec(seed=101, users=120, weeks=4, target_events=10_000)
    corpus = synthgen.generate(spec, tmp_path_factory.mktemp("c10k"))
    store, report = ingest_corpus(corpus, tmp_path_factory.mktemp("s10k") / "store.db")
    return corpus, store, report


@pytest.fixture(scope="module")
def corpus100k(tmp_path_factory):
    spec = synthgen.GenSpec(seed=102, users=250, weeks=8, target_events=100_000, verbose=True)
    corpus = synthgen.generate(spec, tmp_path_factory.mktemp("c100k"))
    out = tmp_path_factory.mktemp("s100k") / "store.db"
    store, report = ingest_corpus(corpus, out)
    return corpus, store, report, out


def test_c1_round_trip_fidelity():
    with criterion("round-trip fidelity (1000 trees + 1000 threads < 10 s)"):
        started = time.monotonic()
        rng = random.Random(1)
        for _ in range(1000):
            tree = random_problem_tree(rng, max_nodes=50)
            rows = number_problem_tree(tree, lambda name: 1)
            roots = reconstruct_problem_tree(rows)
            assert len(roots) == 1 and same_topology(roots[0], tree)
        for _ in range(1000):
            raw = random_forum(rng, max_posts=200)
            rows = make_thread_rows(raw)
            parent_of = {pid: parent for pid, parent, _ in raw}
            roots = [pid for pid, parent, _ in raw if parent is None]
            seen = 0
            for root in roots:
                stack = [reconstruct_thread(rows, root)]
                while stack:
                    node = stack.pop()
                    seen += 1
                    for child in node.children:
                        assert parent_of[child.post.collaboration_id] == node.post.collaboration_id
                        stack.append(child)
            assert seen == len(raw)
        elapsed = time.monotonic() - started
        assert elapsed < 10.0, f"round-trips took {elapsed:.1f}s"


def test_c2_ingestion_conservation(corpus10k, corpus100k):
    with criterion("ingestion conservation on 10k and 100k corpora"):
        for corpus, _store, report in (corpus10k[:3], corpus100k[:3]):
            assert report.lines_rejected == 0
            assert report.lines_read == report.rows_emitted + report.lines_rejected
            assert report.lines_read == corpus.ground_truth.lines_emitted
            assert report.table_counts == corpus.ground_truth.table_counts


def test_c3_compaction_analog(corpus100k):
    corpus, _store, report, _out = corpus100k
    with criterion("compaction: store <= 1/3 of verbose raw log, ingest < 60 s"):
        assert corpus.ground_truth.lines_emitted >= 90_000
        ratio = report.output_bytes / report.input_bytes
        print(
            f"  [compaction {report.output_bytes}/{report.input_bytes} bytes"
            f" = {ratio:.3f}; ingest {report.duration_seconds:.1f}s;"
            f" the source report claimed 10x on production data]"
        )
        assert ratio <= 1 / 3
        assert report.duration_seconds < 60.0


def test_c4_partition_matrix(small_ingested, tmp_path):
    store, _report, out = small_ingested
    ledger = IdentityLedger.load(str(out) + ".ledger.json")
    with criterion("partition matrix: 6 golden manifests, 0 PII leaks, audit clean"):
        roster_sentinels = set()
        for pii in ledger.pii.values():
            roster_sentinels.add(str(pii.age))
            roster_sentinels.add(pii.most_frequent_ip)
            roster_sentinels.add(pii.country)
        for level in ACCESS_LEVELS:
            target = tmp_path / level.name
            manifest = export_partition([store], ledger, level, target)
            assert set(manifest.included_tables) == GOLDEN_MANIFESTS[
                (level.linkage, level.collaboration_included)
            ]
            exported = collect_exported_fields(target)
            assert not (roster_sentinels & exported)
            audit = audit_linkability(target)
            if level.linkage == "table_level":
                assert audit.cross_mode_paths == 0
            if level.linkage in ("table_level", "single_course"):
                assert audit.cross_course_paths == 0


def test_c5_statistic_oracle_equivalence(corpus10k):
    _corpus, store, _report = corpus10k
    with criterion("200 random statistic/cut pairs match brute force"):
        view = TableView.from_store(store)
        times = sorted(e.observed_event_timestamp for e in store.observed_events)
        rng = random.Random(55)
        for _ in range(200):
            stat, cuts, oracle_kwargs = random_stat_and_cuts(rng, (times[0], times[-1]))
            engine = compute_statistic(view, stat, cuts)
            oracle = brute_force_statistic(store, **oracle_kwargs)
            assert_rows_match(engine.rows, oracle, rel=1e-9)


def test_c6_correlation_pipeline(tmp_path):
    with criterion("correlation: planted 0.8 within 0.05, linear = 1.0, zero-variance signalled"):
        spec = synthgen.GenSpec(seed=106, users=1000, weeks=1, planted_r=0.8)
        corpus = synthgen.generate(spec, tmp_path / "r08")
        store, _ = ingest_corpus(corpus, tmp_path / "r08.db")
        view = TableView.from_store(store)
        result = video_homework_correlation(view, resolve_problem(view, "homework 1"))
        assert result.n == 1000
        print(f"  [planted r=0.8, recovered r={result.r:.4f} at n={result.n}]")
        assert abs(result.r - 0.8) <= 0.05

        spec = synthgen.GenSpec(seed=107, users=500, weeks=1, exact_linear=True)
        corpus = synthgen.generate(spec, tmp_path / "lin")
        store, _ = ingest_corpus(corpus, tmp_path / "lin.db")
        view = TableView.from_store(store)
        result = video_homework_correlation(view, resolve_problem(view, "homework 1"))
        assert result.r == pytest.approx(1.0, abs=1e-9)

        flat = build_correlation_store([(300, 2), (300, 5), (300, 9)])
        result = video_homework_correlation(TableView.from_store(flat), 1)
        assert result.r is None and result.undefined_reason == "zero variance"


def test_c7_export_consistency(corpus10k):
    _corpus, store, _report = corpus10k
    with criterion("IRT cells equal BKT first-attempt correctness, 100% agreement"):
        view = TableView.from_store(store)
        _, bkt_rows = parse_csv_body(export_bkt(view))
        bkt_cells = {(r[0], r[1]): r[3] for r in bkt_rows}
        header, irt_rows = parse_csv_body(export_irt(view))
        problems = header[1:]
        populated = 0
        for row in irt_rows:
            for problem, cell in zip(problems, row[1:]):
                if cell != "":
                    assert bkt_cells[(row[0], problem)] == cell
                    populated += 1
        assert populated == len(bkt_cells) and populated > 0


def run_cli(tmp, *argv):
    env = dict(os.environ, MOOCTK_SECRET_KEY=SECRET_KEY)
    proc = subprocess.run(
        [sys.executable, "-m", "mooctk.cli", *argv],
        capture_output=True,
        text=True,
        env=env,
        cwd=tmp,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_c8_full_pipeline_determinism(tmp_path):
    with criterion("two full pipeline runs produce identical checksums"):
        digests = []
        for run_dir in (tmp_path / "one", tmp_path / "two"):
            run_dir.mkdir()
            run_cli(run_dir, "gen", "--seed", "7", "--users", "60", "--weeks", "2",
                    "--out", "corpus")
            ingest_out = run_cli(
                run_dir, "ingest", "--in", "corpus/raw_events.jsonl",
                "--structure", "corpus/structure.json", "--roster", "corpus/roster.json",
                "--out", "store.db", "--json",
            )
            store_checksum = json.loads(ingest_out)["store_checksum"]
            partition_out = run_cli(
                run_dir, "partition", "--in", "store.db", "--level", "single_course",
                "--out", "partition", "--json",
            )
            partition_checksum = json.loads(partition_out)["checksum"]
            run_cli(run_dir, "stat", "--name", "avg_submissions_by_country",
                    "--in", "store.db", "--out", "stat.csv")
            digests.append(
                (store_checksum, partition_checksum, (run_dir / "stat.csv").read_bytes())
            )
        assert digests[0] == digests[1]
