from __future__ import annotations

import random

import pytest

from mooctk.schema import (
    Assessment,
    CourseStore,
    format_timestamp,
    parse_timestamp,
)
from mooctk.storeio import StoreIOError, load_store
from mooctk.validation import validate_store


def test_timestamp_round_trip():
    for ms in (1199145600000, 1772409600123, 4102444799999):
        assert parse_timestamp(format_timestamp(ms)) == ms
    assert parse_timestamp("2026-03-02T00:00:00Z") == 1772409600000
    assert format_timestamp(1772409600001).endswith(".001Z")


def test_empty_store_is_valid():
    assert validate_store(CourseStore(course_id="empty")).ok


def test_grade_out_of_range_flagged(small_store):
    store = small_store
    bad = Assessment(
        assessment_id=10_000,
        submission_id=store.submissions[0].submission_id,
        assessment_grader_id=0,
        assessment_grade=1.2,
        assessment_feedback="",
        assessment_timestamp=store.submissions[0].submission_timestamp,
    )
    store.assessments.append(bad)
    try:
        report = validate_store(store)
        assert any(
            v.table == "assessments" and "grade out of [0,1]" in v.invariant
            for v in report.violations
        )
    finally:
        store.assessments.pop()
    assert validate_store(store).ok


def test_corrupted_parent_pointer_yields_single_forest_violation(small_store):
    store = small_store
    rng = random.Random(5)
    victim = rng.choice([p for p in store.problems if p.problem_parent_id is not None])
    original = victim.problem_parent_id
    victim.problem_parent_id = victim.problem_id  # self-cycle
    try:
        report = validate_store(store)
        forest = [v for v in report.violations if "cycle" in v.invariant or "dangling" in v.invariant]
        assert len(forest) == 1
        assert forest[0].table == "problems"
        assert forest[0].row_key == victim.problem_id
    finally:
        victim.problem_parent_id = original
    assert validate_store(store).ok


def test_referential_closure_on_ingested_store(small_store):
    assert validate_store(small_store).ok


def test_attempt_monotonicity_violation_detected(small_store):
    store = small_store
    by_pair: dict[tuple, list] = {}
    for s in store.submissions:
        by_pair.setdefault((s.user_id, s.problem_id), []).append(s)
    repeats = [subs for subs in by_pair.values() if len(subs) > 1]
    assert repeats, "corpus should contain repeat attempts"
    subs = repeats[0]
    sub = min(subs, key=lambda s: s.submission_attempt_number)
    original = sub.submission_timestamp
    # push the first attempt after every later one from the same user/problem
    sub.submission_timestamp = max(s.submission_timestamp for s in subs) + 1000
    try:
        report = validate_store(store)
        assert any("attempt numbers" in v.invariant for v in report.violations)
    finally:
        sub.submission_timestamp = original


def test_unreadable_store_raises_io_error(tmp_path):
    with pytest.raises(StoreIOError):
        load_store(tmp_path / "missing.db")
    garbage = tmp_path / "garbage.db"
    garbage.write_bytes(b"this is not a database")
    with pytest.raises(StoreIOError):
        load_store(garbage)
