"""Research-study input files: knowledge-tracing sequences, response matrices,
and raw table dumps. All exports are CSV led by a format-version comment line
and carry only mode-scoped user ids."""
from __future__ import annotations

import os
from pathlib import Path

from .analytics import TableView, depth_first_leaves
from .schema import format_timestamp
from .storeio import table_to_csv_bytes

BKT_HEADER = "# mooctk-bkt 1\n"
IRT_HEADER = "# mooctk-irt 1\n"
DUMP_HEADER = "# mooctk-table 1\n"


def first_graded_attempts(view: TableView) -> dict[tuple[int, int], tuple]:
    """(student submissions-mode id, leaf problem) -> the student's first graded
    attempt there: (attempt_number, correct 0/1, timestamp).

    First = lowest attempt number among rows with is_submitted and at least one
    assessment; correct means its best grade is exactly 1.0.
    """
    graded: dict[int, float] = {}
    for a in view.table("assessments"):
        prev = graded.get(a.submission_id)
        if prev is None or a.assessment_grade > prev:
            graded[a.submission_id] = a.assessment_grade
    firsts: dict[tuple[int, int], tuple] = {}
    for sub in view.table("submissions"):
        if not sub.is_submitted or sub.submission_id not in graded:
            continue
        key = (sub.user_id, sub.problem_id)
        prev = firsts.get(key)
        if prev is None or sub.submission_attempt_number < prev[0]:
            correct = 1 if graded[sub.submission_id] == 1.0 else 0
            firsts[key] = (sub.submission_attempt_number, correct, sub.submission_timestamp)
    return firsts


def export_bkt(view: TableView) -> str:
    """Sequence file: one row per (student, leaf problem) first graded attempt,
    sorted by student then timestamp."""
    firsts = first_graded_attempts(view)
    rows = sorted(
        ((user, ts, problem, attempt, correct) for (user, problem), (attempt, correct, ts) in firsts.items()),
    )
    lines = [BKT_HEADER.rstrip("\n"), "student_id,problem_id,attempt_index,first_attempt_correct,timestamp"]
    for user, ts, problem, attempt, correct in rows:
        lines.append(f"{user},{problem},{attempt},{correct},{format_timestamp(ts)}")
    return "\n".join(lines) + "\n"


def export_irt(view: TableView) -> str:
    """Response matrix: students x leaf problems, cells are first-attempt
    correctness (blank when the student never had a graded attempt). Columns
    follow the depth-first leaf order of the problem forest."""
    leaf_order = depth_first_leaves(view)
    firsts = first_graded_attempts(view)
    students = sorted({user for (user, _problem) in firsts})
    lines = [IRT_HEADER.rstrip("\n"), "student_id," + ",".join(str(p) for p in leaf_order)]
    for student in students:
        cells = []
        for problem in leaf_order:
            hit = firsts.get((student, problem))
            cells.append("" if hit is None else str(hit[1]))
        lines.append(f"{student}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def export_table(store, table: str) -> bytes:
    """Raw dump of one store table, same encoding as partition exports."""
    return DUMP_HEADER.encode() + table_to_csv_bytes(store, table)


def write_export(text: str | bytes, path: str | os.PathLike) -> None:
    path = Path(path)
    if isinstance(text, str):
        text = text.encode("utf-8")
    path.write_bytes(text)
