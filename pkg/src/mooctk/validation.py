"""Referential and structural invariant checks over a course store."""
from __future__ import annotations

from dataclasses import dataclass, field

from .schema import AUTO_GRADER_ID, TIMESTAMP_MAX_MS, TIMESTAMP_MIN_MS, CourseStore


@dataclass(slots=True)
class Violation:
    table: str
    row_key: int | str
    invariant: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, table: str, row_key, invariant: str, detail: str = ""):
        self.violations.append(Violation(table, row_key, invariant, detail))

    def lines(self) -> list[str]:
        return [
            f"{v.table}[{v.row_key}]: {v.invariant}" + (f" ({v.detail})" if v.detail else "")
            for v in self.violations
        ]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"table": v.table, "row_key": v.row_key, "invariant": v.invariant, "detail": v.detail}
                for v in self.violations
            ],
        }


def _check_ts(report: ValidationReport, table: str, key, name: str, ms: int | None):
    if ms is None:
        return
    if not (TIMESTAMP_MIN_MS <= ms < TIMESTAMP_MAX_MS):
        report.add(table, key, f"{name} outside valid range")


def _forest_violations(report, table, key_name, rows, id_of, parent_of):
    ids = {id_of(r) for r in rows}
    parents = {id_of(r): parent_of(r) for r in rows}
    for rid, parent in parents.items():
        if parent is not None and parent not in ids:
            report.add(table, rid, f"dangling {key_name} parent", f"parent {parent} missing")
            parents[rid] = None  # keep cycle detection going on the rest
    state: dict[int, int] = {}
    for rid in ids:
        chain = []
        cur = rid
        while cur is not None and state.get(cur) != 1:
            if state.get(cur) == 0:
                for c in chain:
                    if state.get(c) == 0:
                        state[c] = 1
                report.add(table, cur, f"{key_name} parent cycle")
                break
            state[cur] = 0
            chain.append(cur)
            cur = parents[cur]
        for c in chain:
            if state.get(c) == 0:
                state[c] = 1


def validate_store(store: CourseStore) -> ValidationReport:
    """Check every referential and structural invariant; returns a report that
    is empty iff the store is valid."""
    report = ValidationReport()

    rtype_ids = {r.resource_type_id for r in store.resource_types}
    resource_ids = {r.resource_id for r in store.resources}
    url_ids = {u.url_id for u in store.urls}
    ptype_ids = {p.problem_type_id for p in store.problem_types}
    problem_by_id = {p.problem_id: p for p in store.problems}
    submission_by_id = {s.submission_id: s for s in store.submissions}
    ctype_ids = {c.collaboration_type_id for c in store.collaboration_types}
    question_ids = {q.question_id for q in store.questions}
    answer_ids = {a.answer_id for a in store.answers}
    survey_ids = {s.survey_id for s in store.surveys}
    observed_uids = {u.observed_id for u in store.course_users}
    submission_uids = {u.submissions_id for u in store.course_users}
    collaboration_uids = {u.collaborations_id for u in store.course_users}
    feedback_uids = {u.feedback_id for u in store.course_users}

    # resources: forest, unique uri, distinct child numbers per parent
    seen_uris: dict[str, int] = {}
    for r in store.resources:
        if r.resource_type_id not in rtype_ids:
            report.add("resources", r.resource_id, "unresolved resource_type_id")
        if r.resource_uri in seen_uris:
            report.add("resources", r.resource_id, "duplicate resource_uri", r.resource_uri)
        seen_uris.setdefault(r.resource_uri, r.resource_id)
    _forest_violations(
        report, "resources", "resource", store.resources,
        lambda r: r.resource_id, lambda r: r.resource_parent,
    )
    child_numbers: dict[tuple, set] = {}
    for r in store.resources:
        if r.resource_parent is None or r.resource_child_number is None:
            continue
        taken = child_numbers.setdefault((r.resource_parent,), set())
        if r.resource_child_number in taken:
            report.add("resources", r.resource_id, "duplicate sibling child number")
        taken.add(r.resource_child_number)

    seen_urls: dict[str, int] = {}
    for u in store.urls:
        if u.url in seen_urls:
            report.add("urls", u.url_id, "duplicate url", u.url)
        seen_urls.setdefault(u.url, u.url_id)

    link_pairs = set()
    for link in store.resource_urls:
        pair = (link.resource_id, link.url_id)
        if pair in link_pairs:
            report.add("resource_urls", f"{pair[0]}/{pair[1]}", "duplicate resource/url pair")
        link_pairs.add(pair)
        if link.resource_id not in resource_ids:
            report.add("resource_urls", f"{pair[0]}/{pair[1]}", "unresolved resource_id")
        if link.url_id not in url_ids:
            report.add("resource_urls", f"{pair[0]}/{pair[1]}", "unresolved url_id")

    for e in store.observed_events:
        if e.observed_event_duration < 0:
            report.add("observed_events", e.observed_event_id, "negative duration")
        if e.resource_id not in resource_ids:
            report.add("observed_events", e.observed_event_id, "unresolved resource_id")
        if e.url_id not in url_ids:
            report.add("observed_events", e.observed_event_id, "unresolved url_id")
        elif (e.resource_id, e.url_id) not in link_pairs:
            report.add(
                "observed_events", e.observed_event_id,
                "resource/url pair missing from resource_urls",
            )
        if store.course_users and e.user_id_observed not in observed_uids:
            report.add("observed_events", e.observed_event_id, "unresolved user_id_observed")
        _check_ts(report, "observed_events", e.observed_event_id, "timestamp", e.observed_event_timestamp)

    # problems: forest, deadline ordering
    for p in store.problems:
        if p.problem_type_id not in ptype_ids:
            report.add("problems", p.problem_id, "unresolved problem_type_id")
        rel, soft, hard = (
            p.problem_release_timestamp,
            p.problem_soft_deadline_timestamp,
            p.problem_hard_deadline_timestamp,
        )
        if soft is not None and hard is not None and soft > hard:
            report.add("problems", p.problem_id, "soft deadline after hard deadline")
        if rel is not None and soft is not None and rel > soft:
            report.add("problems", p.problem_id, "release after soft deadline")
        if p.problem_max_submission is not None and p.problem_max_submission <= 0:
            report.add("problems", p.problem_id, "non-positive max submission bound")
    _forest_violations(
        report, "problems", "problem", store.problems,
        lambda p: p.problem_id, lambda p: p.problem_parent_id,
    )

    non_leaf = {p.problem_parent_id for p in store.problems if p.problem_parent_id is not None}
    per_user_problem: dict[tuple, list] = {}
    for s in store.submissions:
        problem = problem_by_id.get(s.problem_id)
        if problem is None:
            report.add("submissions", s.submission_id, "unresolved problem_id")
        elif s.problem_id in non_leaf:
            report.add("submissions", s.submission_id, "submission on non-leaf problem")
        if s.submission_attempt_number <= 0:
            report.add("submissions", s.submission_id, "non-positive attempt number")
        if store.course_users and s.user_id not in submission_uids:
            report.add("submissions", s.submission_id, "unresolved user_id")
        _check_ts(report, "submissions", s.submission_id, "timestamp", s.submission_timestamp)
        per_user_problem.setdefault((s.user_id, s.problem_id), []).append(s)

    for (user_id, problem_id), subs in per_user_problem.items():
        ordered = sorted(subs, key=lambda s: (s.submission_timestamp, s.submission_attempt_number))
        attempts = [s.submission_attempt_number for s in ordered]
        strictly_increasing = all(a < b for a, b in zip(attempts, attempts[1:]))
        # attempt order must agree with time order
        by_time_only = sorted(subs, key=lambda s: s.submission_timestamp)
        inversion = any(
            a.submission_timestamp < b.submission_timestamp
            and a.submission_attempt_number > b.submission_attempt_number
            for a, b in zip(by_time_only, by_time_only[1:])
        )
        if not strictly_increasing or inversion:
            report.add(
                "submissions", ordered[-1].submission_id,
                "attempt numbers not strictly increasing with timestamp",
                f"user {user_id} problem {problem_id}",
            )
        problem = problem_by_id.get(problem_id)
        if problem is not None and problem.problem_max_submission is not None:
            submitted = sum(1 for s in subs if s.is_submitted)
            if submitted > problem.problem_max_submission:
                report.add(
                    "submissions", ordered[-1].submission_id,
                    "submitted attempts exceed problem_max_submission",
                    f"user {user_id} problem {problem_id}: {submitted} > {problem.problem_max_submission}",
                )

    for a in store.assessments:
        if not (0.0 <= a.assessment_grade <= 1.0):
            report.add("assessments", a.assessment_id, "grade out of [0,1]", repr(a.assessment_grade))
        sub = submission_by_id.get(a.submission_id)
        if sub is None:
            report.add("assessments", a.assessment_id, "unresolved submission_id")
        elif a.assessment_timestamp < sub.submission_timestamp:
            report.add("assessments", a.assessment_id, "assessed before submission")
        if (
            store.course_users
            and a.assessment_grader_id != AUTO_GRADER_ID
            and a.assessment_grader_id not in submission_uids
        ):
            report.add("assessments", a.assessment_id, "unresolved grader id")
        _check_ts(report, "assessments", a.assessment_id, "timestamp", a.assessment_timestamp)

    collab_by_id = {c.collaboration_id: c for c in store.collaborations}
    for c in store.collaborations:
        if c.collaboration_type_id not in ctype_ids:
            report.add("collaborations", c.collaboration_id, "unresolved collaboration_type_id")
        if store.course_users and c.user_id not in collaboration_uids:
            report.add("collaborations", c.collaboration_id, "unresolved user_id")
        parent = collab_by_id.get(c.collaboration_parent_id) if c.collaboration_parent_id else None
        if parent is not None and c.collaboration_timestamp < parent.collaboration_timestamp:
            report.add("collaborations", c.collaboration_id, "reply predates its parent")
        _check_ts(report, "collaborations", c.collaboration_id, "timestamp", c.collaboration_timestamp)
    _forest_violations(
        report, "collaborations", "collaboration", store.collaborations,
        lambda c: c.collaboration_id, lambda c: c.collaboration_parent_id,
    )

    for f in store.feedbacks:
        if f.question_id not in question_ids:
            report.add("feedbacks", f.feedback_id, "unresolved question_id")
        if f.answer_id not in answer_ids:
            report.add("feedbacks", f.feedback_id, "unresolved answer_id")
        if store.course_users and f.user_id not in feedback_uids:
            report.add("feedbacks", f.feedback_id, "unresolved user_id")
        _check_ts(report, "feedbacks", f.feedback_id, "timestamp", f.feedback_timestamp)

    for q in store.questions:
        if q.question_reference is not None and q.question_reference not in resource_ids:
            report.add("questions", q.question_id, "unresolved question_reference")
        if q.survey_id is not None and q.survey_id not in survey_ids:
            report.add("questions", q.question_id, "unresolved survey_id")

    for s in store.surveys:
        if s.survey_start_timestamp > s.survey_end_timestamp:
            report.add("surveys", s.survey_id, "survey starts after it ends")

    for u in store.course_users:
        if not (0.0 <= u.final_grade <= 1.0):
            report.add("course_users", u.course_user_id, "final grade out of [0,1]")

    return report
