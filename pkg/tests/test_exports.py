from __future__ import annotations

from mooctk.analytics import TableView, depth_first_leaves
from mooctk.exports import export_bkt, export_irt, export_table, first_graded_attempts
from mooctk.schema import CourseStore

from .test_analytics import build_correlation_store


def parse_csv_body(text: str):
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def test_first_attempt_rule_takes_lowest_attempt():
    # one user, two graded attempts on the same problem: wrong then right
    store = build_correlation_store([(0, 0)])  # makes one wrong check
    view = TableView.from_store(store)
    # add a correct second attempt after the wrong first one
    from mooctk.schema import Assessment, Submission

    first = store.submissions[0]
    second = Submission(
        submission_id=first.submission_id + 1,
        user_id=first.user_id,
        problem_id=first.problem_id,
        submission_timestamp=first.submission_timestamp + 60_000,
        submission_attempt_number=first.submission_attempt_number + 1,
    )
    store.submissions.append(second)
    store.assessments.append(
        Assessment(
            assessment_id=len(store.assessments) + 1,
            submission_id=second.submission_id,
            assessment_grader_id=0,
            assessment_grade=1.0,
            assessment_feedback="",
            assessment_timestamp=second.submission_timestamp,
        )
    )
    text = export_bkt(view)
    _, rows = parse_csv_body(text)
    assert len(rows) == 1
    assert rows[0][3] == "0"  # first attempt was wrong
    assert rows[0][2] == "1"


def test_empty_store_exports_header_only():
    view = TableView.from_store(CourseStore("empty"))
    bkt = export_bkt(view)
    assert bkt.startswith("# mooctk-bkt 1\n")
    _, rows = parse_csv_body(bkt)
    assert rows == []
    irt = export_irt(view)
    _, rows = parse_csv_body(irt)
    assert rows == []


def test_bkt_row_count_matches_generator(small_corpus, small_store):
    view = TableView.from_store(small_store)
    _, rows = parse_csv_body(export_bkt(view))
    assert len(rows) == small_corpus.ground_truth.first_graded_pairs


def test_bkt_sorted_by_student_then_time(small_store):
    view = TableView.from_store(small_store)
    _, rows = parse_csv_body(export_bkt(view))
    keys = [(r[0], r[4]) for r in rows]
    assert keys == sorted(keys)


def test_irt_columns_are_depth_first_leaves(small_store):
    view = TableView.from_store(small_store)
    header, _ = parse_csv_body(export_irt(view))
    assert header[0] == "student_id"
    assert [int(c) for c in header[1:]] == depth_first_leaves(view)


def test_irt_cells_agree_with_bkt(small_store):
    view = TableView.from_store(small_store)
    _, bkt_rows = parse_csv_body(export_bkt(view))
    bkt_cells = {(r[0], r[1]): r[3] for r in bkt_rows}
    header, irt_rows = parse_csv_body(export_irt(view))
    problems = header[1:]
    populated = 0
    for row in irt_rows:
        student = row[0]
        for problem, cell in zip(problems, row[1:]):
            if cell == "":
                assert (student, problem) not in bkt_cells
            else:
                populated += 1
                assert bkt_cells[(student, problem)] == cell
    assert populated == len(bkt_rows)


def test_irt_dense_matrix_shape():
    store = build_correlation_store([(60, 2), (120, 3)])
    view = TableView.from_store(store)
    header, rows = parse_csv_body(export_irt(view))
    assert len(rows) == 2
    assert len(header) == 1 + len(depth_first_leaves(view))


def test_table_dump_has_version_comment(small_store):
    payload = export_table(small_store, "problems").decode()
    assert payload.startswith("# mooctk-table 1\n")
    assert "problem_id" in payload.splitlines()[1]


def test_exports_only_carry_mode_ids(small_store):
    view = TableView.from_store(small_store)
    mode_ids = {str(u.submissions_id) for u in small_store.course_users}
    other_ids = {str(u.course_user_id) for u in small_store.course_users} | {
        str(u.observed_id) for u in small_store.course_users
    }
    _, rows = parse_csv_body(export_bkt(view))
    students = {r[0] for r in rows}
    assert students <= mode_ids
    assert not (students & other_ids)
    assert first_graded_attempts(view)  # non-empty corpus sanity
