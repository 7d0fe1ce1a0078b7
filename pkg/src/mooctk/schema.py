"""Normalized course-interaction schema: row types, dictionaries, and the course store.

Four interaction modes (observing, submitting, collaborating, feedback) each get a
group of tables; dictionaries (resource types, problem types, ...) are shared.
Timestamps are epoch milliseconds UTC in memory and ISO-8601 with a Z suffix on
the wire.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

SCHEMA_VERSION = "1.0"

RESOURCE_TYPE_NAMES = (
    "book",
    "wiki",
    "forums",
    "exercises",
    "video",
    "problems",
    "tutorials",
    "lecture",
)

COLLABORATION_TYPE_NAMES = (
    "forum_question",
    "forum_reply",
    "forum_vote",
    "wiki_edit",
)

# Reserved grader id for machine-graded assessments.
AUTO_GRADER_ID = 0

# Valid range for event timestamps: [2008-01-01, 2100-01-01) UTC.
TIMESTAMP_MIN_MS = 1199145600000
TIMESTAMP_MAX_MS = 4102444800000

_ISO_FMT = "%Y-%m-%dT%H:%M:%S.%f"


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 UTC instant ('...Z', optional fraction) to epoch ms."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1]
    elif raw.endswith("+00:00"):
        raw = raw[:-6]
    if "." not in raw:
        raw += ".000000"
    dt = datetime.strptime(raw, _ISO_FMT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def format_timestamp(ms: int) -> str:
    """Format epoch ms as ISO-8601 UTC with millisecond precision and Z suffix."""
    dt = datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + ".%03dZ" % (ms % 1000)


@dataclass(slots=True)
class ResourceType:
    resource_type_id: int
    resource_type_name: str


@dataclass(slots=True)
class Resource:
    resource_id: int
    resource_name: str
    resource_uri: str
    resource_type_id: int
    resource_parent: int | None = None
    resource_child_number: int | None = None


@dataclass(slots=True)
class Url:
    url_id: int
    url: str


@dataclass(slots=True)
class ResourceUrlLink:
    resource_id: int
    url_id: int


@dataclass(slots=True)
class ObservedEvent:
    observed_event_id: int
    user_id_observed: int
    resource_id: int
    url_id: int
    observed_event_timestamp: int
    observed_event_duration: float = 0.0
    observed_event_ip: str = ""
    observed_event_os: str = ""
    observed_event_agent: str = ""


@dataclass(slots=True)
class ProblemType:
    problem_type_id: int
    problem_type_name: str


@dataclass(slots=True)
class Problem:
    problem_id: int
    problem_parent_id: int | None
    order_id: int | None
    problem_name: str
    problem_type_id: int
    problem_release_timestamp: int | None = None
    problem_soft_deadline_timestamp: int | None = None
    problem_hard_deadline_timestamp: int | None = None
    problem_max_submission: int | None = None


@dataclass(slots=True)
class Submission:
    submission_id: int
    user_id: int
    problem_id: int
    submission_timestamp: int
    submission_attempt_number: int
    submission_answer: str = ""
    submission_ip: str = ""
    submission_os: str = ""
    submission_agent: str = ""
    is_submitted: bool = True


@dataclass(slots=True)
class Assessment:
    assessment_id: int
    submission_id: int
    assessment_grader_id: int
    assessment_grade: float
    assessment_feedback: str
    assessment_timestamp: int


@dataclass(slots=True)
class CollaborationType:
    collaboration_type_id: int
    collaboration_type_name: str


@dataclass(slots=True)
class Collaboration:
    collaboration_id: int
    user_id: int
    collaboration_type_id: int
    collaboration_parent_id: int | None
    collaboration_timestamp: int
    collaboration_content: str = ""
    collaboration_ip: str = ""
    collaboration_os: str = ""
    collaboration_agent: str = ""


@dataclass(slots=True)
class Feedback:
    feedback_id: int
    user_id: int
    question_id: int
    answer_id: int
    feedback_timestamp: int


@dataclass(slots=True)
class Question:
    question_id: int
    question_content: str
    question_type: str = ""
    question_reference: int | None = None
    survey_id: int | None = None


@dataclass(slots=True)
class Answer:
    answer_id: int
    answer_content: str


@dataclass(slots=True)
class Survey:
    survey_id: int
    survey_start_timestamp: int
    survey_end_timestamp: int


@dataclass(slots=True)
class CourseUser:
    """Course-level identity row: one per enrolled user, holding the four
    mode-scoped ids plus non-identifying course attributes."""

    course_user_id: int
    final_grade: float
    user_type: str
    certified: bool
    country: str
    observed_id: int
    submissions_id: int
    collaborations_id: int
    feedback_id: int


# Column kinds drive CSV/SQLite encoding: ts columns are epoch ms in memory,
# ISO-8601 Z strings in CSV, INTEGER in SQLite.
# kind is one of: int, float, str, bool, ts; a trailing "?" marks nullable.
TABLE_SPECS: dict[str, tuple[type, tuple[tuple[str, str], ...]]] = {
    "resource_types": (ResourceType, (("resource_type_id", "int"), ("resource_type_name", "str"))),
    "resources": (
        Resource,
        (
            ("resource_id", "int"),
            ("resource_name", "str"),
            ("resource_uri", "str"),
            ("resource_type_id", "int"),
            ("resource_parent", "int?"),
            ("resource_child_number", "int?"),
        ),
    ),
    "urls": (Url, (("url_id", "int"), ("url", "str"))),
    "resource_urls": (ResourceUrlLink, (("resource_id", "int"), ("url_id", "int"))),
    "observed_events": (
        ObservedEvent,
        (
            ("observed_event_id", "int"),
            ("user_id_observed", "int"),
            ("resource_id", "int"),
            ("url_id", "int"),
            ("observed_event_timestamp", "ts"),
            ("observed_event_duration", "float"),
            ("observed_event_ip", "str"),
            ("observed_event_os", "str"),
            ("observed_event_agent", "str"),
        ),
    ),
    "problem_types": (ProblemType, (("problem_type_id", "int"), ("problem_type_name", "str"))),
    "problems": (
        Problem,
        (
            ("problem_id", "int"),
            ("problem_parent_id", "int?"),
            ("order_id", "int?"),
            ("problem_name", "str"),
            ("problem_type_id", "int"),
            ("problem_release_timestamp", "ts?"),
            ("problem_soft_deadline_timestamp", "ts?"),
            ("problem_hard_deadline_timestamp", "ts?"),
            ("problem_max_submission", "int?"),
        ),
    ),
    "submissions": (
        Submission,
        (
            ("submission_id", "int"),
            ("user_id", "int"),
            ("problem_id", "int"),
            ("submission_timestamp", "ts"),
            ("submission_attempt_number", "int"),
            ("submission_answer", "str"),
            ("submission_ip", "str"),
            ("submission_os", "str"),
            ("submission_agent", "str"),
            ("is_submitted", "bool"),
        ),
    ),
    "assessments": (
        Assessment,
        (
            ("assessment_id", "int"),
            ("submission_id", "int"),
            ("assessment_grader_id", "int"),
            ("assessment_grade", "float"),
            ("assessment_feedback", "str"),
            ("assessment_timestamp", "ts"),
        ),
    ),
    "collaboration_types": (
        CollaborationType,
        (("collaboration_type_id", "int"), ("collaboration_type_name", "str")),
    ),
    "collaborations": (
        Collaboration,
        (
            ("collaboration_id", "int"),
            ("user_id", "int"),
            ("collaboration_type_id", "int"),
            ("collaboration_parent_id", "int?"),
            ("collaboration_timestamp", "ts"),
            ("collaboration_content", "str"),
            ("collaboration_ip", "str"),
            ("collaboration_os", "str"),
            ("collaboration_agent", "str"),
        ),
    ),
    "feedbacks": (
        Feedback,
        (
            ("feedback_id", "int"),
            ("user_id", "int"),
            ("question_id", "int"),
            ("answer_id", "int"),
            ("feedback_timestamp", "ts"),
        ),
    ),
    "questions": (
        Question,
        (
            ("question_id", "int"),
            ("question_content", "str"),
            ("question_type", "str"),
            ("question_reference", "int?"),
            ("survey_id", "int?"),
        ),
    ),
    "answers": (Answer, (("answer_id", "int"), ("answer_content", "str"))),
    "surveys": (
        Survey,
        (("survey_id", "int"), ("survey_start_timestamp", "ts"), ("survey_end_timestamp", "ts")),
    ),
    "course_users": (
        CourseUser,
        (
            ("course_user_id", "int"),
            ("final_grade", "float"),
            ("user_type", "str"),
            ("certified", "bool"),
            ("country", "str"),
            ("observed_id", "int"),
            ("submissions_id", "int"),
            ("collaborations_id", "int"),
            ("feedback_id", "int"),
        ),
    ),
}

TABLE_NAMES = tuple(TABLE_SPECS)


def encode_value(value, kind: str) -> str:
    """Encode one field for CSV per its column kind (None -> empty string)."""
    if value is None:
        return ""
    base = kind.rstrip("?")
    if base == "ts":
        return format_timestamp(value)
    if base == "bool":
        return "1" if value else "0"
    if base == "float":
        return repr(float(value))
    return str(value)


def decode_value(text: str, kind: str):
    """Inverse of encode_value."""
    if text == "" and kind.endswith("?"):
        return None
    base = kind.rstrip("?")
    if base == "ts":
        return parse_timestamp(text)
    if base == "bool":
        return text in ("1", "true", "True")
    if base == "float":
        return float(text)
    if base == "int":
        return int(text)
    return text


@dataclass
class CourseStore:
    """All tables for one course, held in memory.

    Mutation happens during the single-writer ingestion phase; afterwards the
    store is treated as read-only and is safe to share across threads.
    """

    course_id: str
    schema_version: str = SCHEMA_VERSION
    resource_types: list[ResourceType] = field(default_factory=list)
    resources: list[Resource] = field(default_factory=list)
    urls: list[Url] = field(default_factory=list)
    resource_urls: list[ResourceUrlLink] = field(default_factory=list)
    observed_events: list[ObservedEvent] = field(default_factory=list)
    problem_types: list[ProblemType] = field(default_factory=list)
    problems: list[Problem] = field(default_factory=list)
    submissions: list[Submission] = field(default_factory=list)
    assessments: list[Assessment] = field(default_factory=list)
    collaboration_types: list[CollaborationType] = field(default_factory=list)
    collaborations: list[Collaboration] = field(default_factory=list)
    feedbacks: list[Feedback] = field(default_factory=list)
    questions: list[Question] = field(default_factory=list)
    answers: list[Answer] = field(default_factory=list)
    surveys: list[Survey] = field(default_factory=list)
    course_users: list[CourseUser] = field(default_factory=list)

    def table(self, name: str) -> list:
        if name not in TABLE_SPECS:
            raise KeyError(f"unknown table {name!r}")
        return getattr(self, name)

    def row_tuples(self, name: str) -> list[tuple]:
        spec = TABLE_SPECS[name][1]
        names = [c for c, _ in spec]
        return [tuple(getattr(row, c) for c in names) for row in self.table(name)]

    def checksum(self) -> str:
        """Content hash over the canonical CSV serialization of every table.

        Stable across storage backends; this is the store identity used by
        determinism checks.
        """
        h = hashlib.sha256()
        h.update(f"{self.course_id}\n{self.schema_version}\n".encode())
        for name in TABLE_NAMES:
            spec = TABLE_SPECS[name][1]
            h.update(name.encode())
            for row in self.table(name):
                line = ",".join(encode_value(getattr(row, col), kind) for col, kind in spec)
                h.update(line.encode())
                h.update(b"\n")
        return h.hexdigest()


def row_to_dict(row) -> dict:
    return {f.name: getattr(row, f.name) for f in fields(row)}
