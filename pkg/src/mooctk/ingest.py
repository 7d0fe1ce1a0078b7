"""Raw-log ingestion: stream heterogeneous sources through adapters into a
validated course store.

The pipeline runs in two passes over the time-ordered event stream, mirroring
the reference-generator / table-populator split: pass one builds every
dictionary (users, resources, urls, problems, types), pass two emits exactly
one mode-table row per event (plus the derived observed-event row that a forum
access also produces), then computes observed durations.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import privacy
from .schema import (
    AUTO_GRADER_ID,
    COLLABORATION_TYPE_NAMES,
    RESOURCE_TYPE_NAMES,
    Answer,
    Assessment,
    Collaboration,
    CollaborationType,
    CourseStore,
    CourseUser,
    Feedback,
    ObservedEvent,
    Problem,
    ProblemType,
    Question,
    Resource,
    ResourceType,
    ResourceUrlLink,
    Submission,
    Survey,
    Url,
    parse_timestamp,
)
from .storeio import save_store, stored_bytes
from .trees import ProblemNode, number_problem_tree
from .validation import validate_store

EVENT_KINDS = (
    "page_view",
    "video_play",
    "problem_check",
    "problem_save",
    "forum_post",
    "forum_vote",
    "wiki_edit",
    "survey_answer",
)

# Resource type guess for uris seen in events but absent from the structure.
DEFAULT_TYPE_MAP = {
    "page_view": "lecture",
    "video_play": "video",
    "forum_post": "forums",
    "forum_vote": "forums",
    "wiki_edit": "wiki",
}

DEFAULT_DURATION_CAP = 1800.0


class IngestError(Exception):
    """Ingestion failed outright (bad structure, adapter failure, missing key)."""


@dataclass(slots=True)
class RawEvent:
    raw_user: str
    event_kind: str
    uri: str
    url: str
    timestamp: int
    payload: dict
    ip: str = ""
    os: str = ""
    agent: str = ""


@dataclass(slots=True)
class RejectedLine:
    source: str
    line_no: int
    reason: str

    def to_dict(self) -> dict:
        return {"source": self.source, "line_no": self.line_no, "reason": self.reason}


# ---------------------------------------------------------------------------
# course structure


@dataclass
class ResourceSpecNode:
    name: str
    uri: str
    type_name: str
    urls: list[str] = field(default_factory=list)
    children: list["ResourceSpecNode"] = field(default_factory=list)


@dataclass
class QuestionSpec:
    handle: str
    content: str
    question_type: str = ""
    resource_uri: str | None = None


@dataclass
class SurveySpec:
    start: int
    end: int
    questions: list[QuestionSpec] = field(default_factory=list)


@dataclass
class CourseStructure:
    course_id: str
    resources: list[ResourceSpecNode] = field(default_factory=list)
    problems: list[ProblemNode] = field(default_factory=list)
    surveys: list[SurveySpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "CourseStructure":
        def resource(node: dict) -> ResourceSpecNode:
            return ResourceSpecNode(
                name=node["name"],
                uri=node["uri"],
                type_name=node.get("type", "lecture"),
                urls=list(node.get("urls", [])),
                children=[resource(c) for c in node.get("children", [])],
            )

        def problem(node: dict) -> ProblemNode:
            ts = lambda k: parse_timestamp(node[k]) if node.get(k) else None
            return ProblemNode(
                name=node["name"],
                uri=node.get("uri"),
                type_name=node.get("type"),
                release=ts("release"),
                soft_deadline=ts("soft_deadline"),
                hard_deadline=ts("hard_deadline"),
                max_submissions=node.get("max_submissions"),
                children=[problem(c) for c in node.get("children", [])],
            )

        surveys = [
            SurveySpec(
                start=parse_timestamp(s["start"]),
                end=parse_timestamp(s["end"]),
                questions=[
                    QuestionSpec(
                        handle=q["handle"],
                        content=q.get("content", ""),
                        question_type=q.get("type", ""),
                        resource_uri=q.get("resource_uri"),
                    )
                    for q in s.get("questions", [])
                ],
            )
            for s in data.get("surveys", [])
        ]
        return cls(
            course_id=data["course_id"],
            resources=[resource(r) for r in data.get("resources", [])],
            problems=[problem(p) for p in data.get("problems", [])],
            surveys=surveys,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CourseStructure":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise IngestError(f"cannot read course structure {path}: {exc}") from exc

    def validate(self) -> None:
        uris: set[str] = set()

        def walk_resource(node: ResourceSpecNode):
            if node.uri in uris:
                raise IngestError(f"duplicate resource uri in structure: {node.uri}")
            uris.add(node.uri)
            if node.type_name not in RESOURCE_TYPE_NAMES:
                raise IngestError(f"unknown resource type {node.type_name!r} for {node.uri}")
            for child in node.children:
                walk_resource(child)

        for root in self.resources:
            walk_resource(root)

        problem_uris: set[str] = set()

        def walk_problem(node: ProblemNode):
            if node.uri:
                if node.uri in problem_uris:
                    raise IngestError(f"duplicate problem uri in structure: {node.uri}")
                problem_uris.add(node.uri)
            for child in node.children:
                walk_problem(child)

        for root in self.problems:
            walk_problem(root)

        handles = [q.handle for s in self.surveys for q in s.questions]
        if len(handles) != len(set(handles)):
            raise IngestError("duplicate survey question handle in structure")


# ---------------------------------------------------------------------------
# adapters


class CanonicalJsonLinesAdapter:
    """Reads the canonical raw format: one JSON object per line with fields
    raw_user, event_kind, uri, url, timestamp, payload, ip, os, agent."""

    name = "canonical"
    version = "1"

    def describe(self) -> str:
        return f"{self.name}/{self.version}"

    def parse_line(self, line: str) -> RawEvent:
        obj = json.loads(line)
        kind = obj["event_kind"]
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event_kind {kind!r}")
        return RawEvent(
            raw_user=obj["raw_user"],
            event_kind=kind,
            uri=obj.get("uri", ""),
            url=obj.get("url", ""),
            timestamp=parse_timestamp(obj["timestamp"]),
            payload=obj.get("payload", {}),
            ip=obj.get("ip", ""),
            os=obj.get("os", ""),
            agent=obj.get("agent", ""),
        )


VERBOSE_KIND_LABELS = {
    "resource_page_view_interaction_event": "page_view",
    "lecture_video_playback_interaction_event": "video_play",
    "problem_answer_correctness_check_submission_event": "problem_check",
    "problem_answer_intermediate_draft_save_event": "problem_save",
    "discussion_forum_post_authoring_interaction_event": "forum_post",
    "discussion_forum_post_voting_interaction_event": "forum_vote",
    "collaborative_wiki_page_revision_interaction_event": "wiki_edit",
    "course_experience_survey_response_submission_event": "survey_answer",
}

VERBOSE_PAYLOAD_KEYS = {
    "submitted_answer_response_content_body": "answer",
    "automated_assessment_correctness_determination": "correct",
    "fractional_credit_grade_awarded_proportion": "grade",
    "discussion_forum_post_unique_handle_identifier": "post",
    "discussion_forum_parent_post_handle_reference": "parent",
    "discussion_forum_post_subject_title_text": "title",
    "discussion_forum_post_message_body_text": "body",
    "vote_direction_indicator_value": "direction",
    "wiki_page_revision_content_body_text": "text",
    "survey_question_unique_handle_identifier": "question",
    "survey_question_response_answer_text": "answer",
}


class VerboseJsonLinesAdapter:
    """Reads the long-field-name export dialect (as produced by the synthetic
    generator's verbose mode) and maps it onto canonical events."""

    name = "verbose"
    version = "1"

    def describe(self) -> str:
        return f"{self.name}/{self.version}"

    def parse_line(self, line: str) -> RawEvent:
        obj = json.loads(line)
        label = obj["behavioral_interaction_event_category_designation"]
        kind = VERBOSE_KIND_LABELS.get(label)
        if kind is None:
            raise ValueError(f"unknown event label {label!r}")
        payload = {}
        for key, value in obj.get("supplementary_event_interaction_payload_attributes", {}).items():
            payload[VERBOSE_PAYLOAD_KEYS.get(key, key)] = value
        return RawEvent(
            raw_user=obj["student_account_unique_handle_identifier"],
            event_kind=kind,
            uri=obj.get("course_material_resource_uniform_identifier_path", ""),
            url=obj.get("web_browser_navigation_destination_page_address", ""),
            timestamp=parse_timestamp(obj["coordinated_universal_time_event_occurrence_timestamp"]),
            payload=payload,
            ip=obj.get("originating_network_internet_protocol_address", ""),
            os=obj.get("client_operating_system_platform_designation", ""),
            agent=obj.get("client_browser_user_agent_identification_string", ""),
        )


ADAPTERS = {
    CanonicalJsonLinesAdapter.name: CanonicalJsonLinesAdapter,
    VerboseJsonLinesAdapter.name: VerboseJsonLinesAdapter,
}


def read_source(adapter, path: str | os.PathLike):
    """Parse one source file; returns (events, rejects, lines_read).

    Events keep (line_no) for the stable merge; blank lines are skipped.
    """
    events: list[tuple[int, RawEvent]] = []
    rejects: list[RejectedLine] = []
    lines_read = 0
    line_no = 0
    source = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                lines_read += 1
                try:
                    events.append((line_no, adapter.parse_line(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    rejects.append(RejectedLine(source, line_no, f"parse: {exc}"))
    except OSError as exc:
        raise IngestError(f"source {path} failed at line {line_no + 1}: {exc}") from exc
    return events, rejects, lines_read


# ---------------------------------------------------------------------------
# pass one: reference generation


@dataclass
class ReferenceSet:
    """Every dictionary the populators need, with dense deterministic ids."""

    users: list[str]
    resource_types: list[ResourceType]
    resources: list[Resource]
    resource_by_uri: dict[str, Resource]
    urls: list[Url]
    url_by_text: dict[str, Url]
    links: set[tuple[int, int]]
    problem_types: list[ProblemType]
    problems: list[Problem]
    problem_by_uri: dict[str, Problem]
    problem_leaves: set[int]
    collaboration_types: list[CollaborationType]
    surveys: list[Survey]
    questions: list[Question]
    question_by_handle: dict[str, Question]
    orphan_resources: list[str]
    orphan_problems: list[str]


def generate_references(
    events: list[RawEvent],
    structure: CourseStructure,
    type_map: dict[str, str] | None = None,
) -> ReferenceSet:
    """Build every dictionary from the structure (authoritative) plus the event
    stream (users, plus orphan uris flagged for the report)."""
    structure.validate()
    type_map = {**DEFAULT_TYPE_MAP, **(type_map or {})}

    resource_types = [ResourceType(i, name) for i, name in enumerate(RESOURCE_TYPE_NAMES, start=1)]
    rtype_ids = {rt.resource_type_name: rt.resource_type_id for rt in resource_types}

    resources: list[Resource] = []
    resource_by_uri: dict[str, Resource] = {}
    urls: list[Url] = []
    url_by_text: dict[str, Url] = {}
    links: set[tuple[int, int]] = set()

    def intern_url(text: str) -> Url:
        found = url_by_text.get(text)
        if found is None:
            found = Url(len(urls) + 1, text)
            urls.append(found)
            url_by_text[text] = found
        return found

    def walk_resource(node: ResourceSpecNode, parent_id: int | None, child_no: int | None):
        row = Resource(
            resource_id=len(resources) + 1,
            resource_name=node.name,
            resource_uri=node.uri,
            resource_type_id=rtype_ids[node.type_name],
            resource_parent=parent_id,
            resource_child_number=child_no,
        )
        resources.append(row)
        resource_by_uri[node.uri] = row
        for url_text in node.urls:
            links.add((row.resource_id, intern_url(url_text).url_id))
        for number, child in enumerate(node.children, start=1):
            walk_resource(child, row.resource_id, number)

    for root in structure.resources:
        walk_resource(root, None, None)

    problem_types: list[ProblemType] = []
    ptype_ids: dict[str, int] = {}

    def intern_ptype(name: str | None) -> int:
        name = name or "unknown"
        if name not in ptype_ids:
            problem_types.append(ProblemType(len(problem_types) + 1, name))
            ptype_ids[name] = len(problem_types)
        return ptype_ids[name]

    problems: list[Problem] = []
    problem_by_uri: dict[str, Problem] = {}
    for root in structure.problems:
        rows = number_problem_tree(root, intern_ptype, start_id=len(problems) + 1)
        problems.extend(rows)
        by_id = {r.problem_id: r for r in rows}

        def index_node(node: ProblemNode):
            if node.uri:
                problem_by_uri[node.uri] = by_id[node.problem_id]
            for child in node.children:
                index_node(child)

        index_node(root)

    surveys: list[Survey] = []
    questions: list[Question] = []
    question_by_handle: dict[str, Question] = {}
    for spec in structure.surveys:
        survey = Survey(len(surveys) + 1, spec.start, spec.end)
        surveys.append(survey)
        for q in spec.questions:
            ref = resource_by_uri.get(q.resource_uri) if q.resource_uri else None
            row = Question(
                question_id=len(questions) + 1,
                question_content=q.content,
                question_type=q.question_type,
                question_reference=ref.resource_id if ref else None,
                survey_id=survey.survey_id,
            )
            questions.append(row)
            question_by_handle[q.handle] = row

    users: list[str] = []
    seen_users: set[str] = set()
    orphan_resources: list[str] = []
    orphan_problems: list[str] = []
    for event in events:
        if event.raw_user not in seen_users:
            seen_users.add(event.raw_user)
            users.append(event.raw_user)
        if event.event_kind in ("problem_check", "problem_save"):
            if event.uri and event.uri not in problem_by_uri:
                row = Problem(
                    problem_id=len(problems) + 1,
                    problem_parent_id=None,
                    order_id=None,
                    problem_name=event.uri,
                    problem_type_id=intern_ptype("unknown"),
                )
                problems.append(row)
                problem_by_uri[event.uri] = row
                orphan_problems.append(event.uri)
        elif event.event_kind != "survey_answer":
            if event.uri and event.uri not in resource_by_uri:
                row = Resource(
                    resource_id=len(resources) + 1,
                    resource_name=event.uri,
                    resource_uri=event.uri,
                    resource_type_id=rtype_ids[type_map[event.event_kind]],
                    resource_parent=None,
                    resource_child_number=None,
                )
                resources.append(row)
                resource_by_uri[event.uri] = row
                orphan_resources.append(event.uri)
        if event.url and event.event_kind not in ("problem_check", "problem_save", "survey_answer"):
            url = intern_url(event.url)
            res = resource_by_uri.get(event.uri)
            if res is not None:
                links.add((res.resource_id, url.url_id))

    parent_ids = {p.problem_parent_id for p in problems if p.problem_parent_id is not None}
    leaves = {p.problem_id for p in problems if p.problem_id not in parent_ids}

    collaboration_types = [
        CollaborationType(i, name) for i, name in enumerate(COLLABORATION_TYPE_NAMES, start=1)
    ]
    return ReferenceSet(
        users=users,
        resource_types=resource_types,
        resources=resources,
        resource_by_uri=resource_by_uri,
        urls=urls,
        url_by_text=url_by_text,
        links=links,
        problem_types=problem_types,
        problems=problems,
        problem_by_uri=problem_by_uri,
        problem_leaves=leaves,
        collaboration_types=collaboration_types,
        surveys=surveys,
        questions=questions,
        question_by_handle=question_by_handle,
        orphan_resources=orphan_resources,
        orphan_problems=orphan_problems,
    )


# ---------------------------------------------------------------------------
# roster


@dataclass(slots=True)
class RosterEntry:
    raw_user: str
    final_grade: float = 0.0
    user_type: str = "student"
    certified: bool = False
    country: str = ""  # coarse, non-identifying; exported with the course user table
    age: int | None = None
    pii_country: str = ""  # PII-table country; never exported
    most_frequent_ip: str | None = None


def load_roster(path: str | os.PathLike) -> dict[str, RosterEntry]:
    try:
        data = json.loads(Path(path).read_text())
        roster = {}
        for entry in data:
            roster[entry["raw_user"]] = RosterEntry(
                raw_user=entry["raw_user"],
                final_grade=float(entry.get("final_grade", 0.0)),
                user_type=entry.get("user_type", "student"),
                certified=bool(entry.get("certified", False)),
                country=entry.get("country", ""),
                age=entry.get("age"),
                pii_country=entry.get("pii_country", ""),
                most_frequent_ip=entry.get("most_frequent_ip"),
            )
        return roster
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"cannot read roster {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# pass two: table population


@dataclass
class PopulateResult:
    store: CourseStore
    rejects: list[RejectedLine]
    rows_emitted: int


def populate_tables(
    events: list[tuple[str, int, RawEvent]],
    refs: ReferenceSet,
    ledger: privacy.IdentityLedger,
    course_id: str,
    roster: dict[str, RosterEntry] | None = None,
) -> PopulateResult:
    """Emit one mode-table row per event (forum accesses additionally emit an
    observed-event row). Events must already be merged in canonical order;
    ``events`` items are (source, line_no, event)."""
    roster = roster or {}
    store = CourseStore(course_id=course_id)
    store.resource_types = list(refs.resource_types)
    store.resources = list(refs.resources)
    store.urls = list(refs.urls)
    store.resource_urls = [
        ResourceUrlLink(rid, uid) for rid, uid in sorted(refs.links)
    ]
    store.problem_types = list(refs.problem_types)
    store.problems = list(refs.problems)
    store.collaboration_types = list(refs.collaboration_types)
    store.surveys = list(refs.surveys)
    store.questions = list(refs.questions)

    link_pairs = refs.links
    modes_of = {raw: ledger.mode_ids(raw, course_id) for raw in refs.users}
    for raw_user in refs.users:
        ident = ledger.identity(raw_user).courses[course_id]
        entry = roster.get(raw_user, RosterEntry(raw_user))
        store.course_users.append(
            CourseUser(
                course_user_id=ident.course_user_id,
                final_grade=entry.final_grade,
                user_type=entry.user_type,
                certified=entry.certified,
                country=entry.country,
                observed_id=ident.modes.observed_id,
                submissions_id=ident.modes.submissions_id,
                collaborations_id=ident.modes.collaborations_id,
                feedback_id=ident.modes.feedback_id,
            )
        )

    rejects: list[RejectedLine] = []
    rows_emitted = 0
    attempt_counter: dict[tuple[int, int], int] = {}
    post_handle_ids: dict[str, int] = {}
    answer_ids: dict[str, Answer] = {}

    def observed_row(event: RawEvent, modes) -> None:
        resource = refs.resource_by_uri[event.uri]
        url = refs.url_by_text.get(event.url)
        if url is None:
            url = Url(len(store.urls) + 1, event.url)
            store.urls.append(url)
            refs.url_by_text[event.url] = url
        if (resource.resource_id, url.url_id) not in link_pairs:
            link_pairs.add((resource.resource_id, url.url_id))
            store.resource_urls.append(ResourceUrlLink(resource.resource_id, url.url_id))
        store.observed_events.append(
            ObservedEvent(
                observed_event_id=len(store.observed_events) + 1,
                user_id_observed=modes.observed_id,
                resource_id=resource.resource_id,
                url_id=url.url_id,
                observed_event_timestamp=event.timestamp,
                observed_event_duration=0.0,
                observed_event_ip=event.ip,
                observed_event_os=event.os,
                observed_event_agent=event.agent,
            )
        )

    for source, line_no, event in events:
        modes = modes_of[event.raw_user]
        kind = event.event_kind
        try:
            if kind in ("page_view", "video_play"):
                observed_row(event, modes)
            elif kind in ("problem_check", "problem_save"):
                problem = refs.problem_by_uri[event.uri]
                if problem.problem_id not in refs.problem_leaves:
                    raise KeyError(f"submission on non-leaf problem {event.uri!r}")
                key = (modes.submissions_id, problem.problem_id)
                attempt_counter[key] = attempt_counter.get(key, 0) + 1
                submission = Submission(
                    submission_id=len(store.submissions) + 1,
                    user_id=modes.submissions_id,
                    problem_id=problem.problem_id,
                    submission_timestamp=event.timestamp,
                    submission_attempt_number=attempt_counter[key],
                    submission_answer=str(event.payload.get("answer", "")),
                    submission_ip=event.ip,
                    submission_os=event.os,
                    submission_agent=event.agent,
                    is_submitted=kind == "problem_check",
                )
                store.submissions.append(submission)
                if kind == "problem_check" and ("correct" in event.payload or "grade" in event.payload):
                    if "grade" in event.payload:
                        grade = float(event.payload["grade"])
                    else:
                        grade = 1.0 if event.payload["correct"] else 0.0
                    store.assessments.append(
                        Assessment(
                            assessment_id=len(store.assessments) + 1,
                            submission_id=submission.submission_id,
                            assessment_grader_id=AUTO_GRADER_ID,
                            assessment_grade=grade,
                            assessment_feedback="",
                            assessment_timestamp=event.timestamp,
                        )
                    )
            elif kind in ("forum_post", "forum_vote", "wiki_edit"):
                parent_handle = event.payload.get("parent")
                parent_id = None
                if parent_handle is not None:
                    parent_id = post_handle_ids.get(parent_handle)
                    if parent_id is None:
                        raise KeyError(f"unknown parent post {parent_handle!r}")
                if kind == "forum_post":
                    title = event.payload.get("title")
                    body = event.payload.get("body", "")
                    if title is not None:
                        type_name = "forum_question"
                        content = json.dumps({"title": title, "body": body}, sort_keys=True)
                    else:
                        type_name = "forum_reply"
                        content = body
                elif kind == "forum_vote":
                    type_name = "forum_vote"
                    content = str(event.payload.get("direction", "+1"))
                else:
                    type_name = "wiki_edit"
                    content = str(event.payload.get("text", ""))
                type_id = COLLABORATION_TYPE_NAMES.index(type_name) + 1
                row = Collaboration(
                    collaboration_id=len(store.collaborations) + 1,
                    user_id=modes.collaborations_id,
                    collaboration_type_id=type_id,
                    collaboration_parent_id=parent_id,
                    collaboration_timestamp=event.timestamp,
                    collaboration_content=content,
                    collaboration_ip=event.ip,
                    collaboration_os=event.os,
                    collaboration_agent=event.agent,
                )
                store.collaborations.append(row)
                if kind == "forum_post" and event.payload.get("post"):
                    post_handle_ids[event.payload["post"]] = row.collaboration_id
                if kind in ("forum_post", "forum_vote"):
                    # a forum access is also an observed event
                    observed_row(event, modes)
            elif kind == "survey_answer":
                question = refs.question_by_handle.get(event.payload.get("question", ""))
                if question is None:
                    raise KeyError(f"unknown survey question {event.payload.get('question')!r}")
                text = str(event.payload.get("answer", ""))
                answer = answer_ids.get(text)
                if answer is None:
                    answer = Answer(len(store.answers) + 1, text)
                    store.answers.append(answer)
                    answer_ids[text] = answer
                store.feedbacks.append(
                    Feedback(
                        feedback_id=len(store.feedbacks) + 1,
                        user_id=modes.feedback_id,
                        question_id=question.question_id,
                        answer_id=answer.answer_id,
                        feedback_timestamp=event.timestamp,
                    )
                )
            else:
                raise KeyError(f"unmappable event kind {kind!r}")
        except KeyError as exc:
            rejects.append(RejectedLine(source, line_no, str(exc.args[0])))
            continue
        rows_emitted += 1
    return PopulateResult(store=store, rejects=rejects, rows_emitted=rows_emitted)


def compute_durations(store: CourseStore, cap_seconds: float = DEFAULT_DURATION_CAP) -> CourseStore:
    """Set each observed event's duration to the capped gap to the user's next
    event; a user's final event gets 0."""
    per_user: dict[int, list[ObservedEvent]] = {}
    for event in store.observed_events:
        per_user.setdefault(event.user_id_observed, []).append(event)
    for events in per_user.values():
        events.sort(key=lambda e: (e.observed_event_timestamp, e.observed_event_id))
        for current, nxt in zip(events, events[1:]):
            delta = (nxt.observed_event_timestamp - current.observed_event_timestamp) / 1000.0
            current.observed_event_duration = min(delta, cap_seconds)
        events[-1].observed_event_duration = 0.0
    return store


# ---------------------------------------------------------------------------
# the composed pipeline


@dataclass
class IngestConfig:
    duration_cap_seconds: float = DEFAULT_DURATION_CAP
    adapter: str = "canonical"
    type_map: dict[str, str] = field(default_factory=dict)
    roster_path: str | None = None
    rejects_path: str | None = None
    secret_key: str | None = None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IngestConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestError(f"cannot read config {path}: {exc}") from exc
        cfg = cls()
        for key in (
            "duration_cap_seconds",
            "adapter",
            "type_map",
            "roster_path",
            "rejects_path",
        ):
            if key in data:
                setattr(cfg, key, data[key])
        return cfg


@dataclass
class IngestReport:
    course_id: str
    lines_read: int = 0
    rows_emitted: int = 0
    lines_rejected: int = 0
    rejects: list[RejectedLine] = field(default_factory=list)
    table_counts: dict[str, int] = field(default_factory=dict)
    orphan_resources: list[str] = field(default_factory=list)
    orphan_problems: list[str] = field(default_factory=list)
    input_bytes: int = 0
    output_bytes: int = 0
    duration_seconds: float = 0.0
    store_checksum: str = ""

    @property
    def compaction_ratio(self) -> float | None:
        if not self.input_bytes or not self.output_bytes:
            return None
        return self.output_bytes / self.input_bytes

    def to_dict(self) -> dict:
        return {
            "course_id": self.course_id,
            "lines_read": self.lines_read,
            "rows_emitted": self.rows_emitted,
            "lines_rejected": self.lines_rejected,
            "table_counts": self.table_counts,
            "orphan_resources": self.orphan_resources,
            "orphan_problems": self.orphan_problems,
            "input_bytes": self.input_bytes,
            "output_bytes": self.output_bytes,
            "compaction_ratio": self.compaction_ratio,
            "duration_seconds": self.duration_seconds,
            "store_checksum": self.store_checksum,
        }


def ingest(
    sources: list[tuple[str, str | os.PathLike]],
    structure: CourseStructure,
    config: IngestConfig,
    out_path: str | os.PathLike | None = None,
    ledger_path: str | os.PathLike | None = None,
) -> tuple[CourseStore, IngestReport]:
    """Run the full pipeline: parse + merge sources, generate references,
    derive identities, populate tables, compute durations, validate, persist.

    ``sources`` is a list of (adapter_name, path). Events from all sources are
    merged by (timestamp, source order, line order) so the result is identical
    to sequential processing regardless of how sources are split.
    """
    if config.secret_key is None:
        raise IngestError("no secret key configured for identity derivation")
    started = time.monotonic()

    merged: list[tuple[int, str, int, RawEvent]] = []
    report = IngestReport(course_id=structure.course_id)
    for source_index, (adapter_name, path) in enumerate(sources):
        adapter_cls = ADAPTERS.get(adapter_name)
        if adapter_cls is None:
            raise IngestError(f"unknown adapter {adapter_name!r}")
        events, rejects, lines_read = read_source(adapter_cls(), path)
        report.lines_read += lines_read
        report.rejects.extend(rejects)
        report.input_bytes += Path(path).stat().st_size
        merged.extend((source_index, str(path), line_no, ev) for line_no, ev in events)
    merged.sort(key=lambda item: (item[3].timestamp, item[0], item[2]))

    raw_events = [item[3] for item in merged]
    refs = generate_references(raw_events, structure, config.type_map)
    ledger = privacy.derive_identities(refs.users, [structure.course_id], config.secret_key)
    roster = load_roster(config.roster_path) if config.roster_path else {}
    for raw_user in refs.users:
        entry = roster.get(raw_user)
        if entry is not None and entry.age is not None:
            ledger.set_pii(raw_user, entry.age, entry.pii_country, entry.most_frequent_ip or "")

    result = populate_tables(
        [(src, line_no, ev) for _, src, line_no, ev in merged],
        refs,
        ledger,
        structure.course_id,
        roster,
    )
    compute_durations(result.store, config.duration_cap_seconds)

    report.rejects.extend(result.rejects)
    report.lines_rejected = len(report.rejects)
    report.rows_emitted = result.rows_emitted
    report.orphan_resources = refs.orphan_resources
    report.orphan_problems = refs.orphan_problems
    report.table_counts = {name: len(result.store.table(name)) for name in _REPORT_TABLES}
    report.store_checksum = result.store.checksum()

    validation = validate_store(result.store)
    if not validation.ok:
        raise IngestError(
            "populated store failed validation: " + "; ".join(validation.lines()[:5])
        )

    if out_path is not None:
        save_store(result.store, out_path)
        report.output_bytes = stored_bytes(out_path)
        rejects_path = config.rejects_path or (str(out_path) + ".rejects.jsonl")
        with open(rejects_path, "w", encoding="utf-8") as fh:
            for reject in report.rejects:
                fh.write(json.dumps(reject.to_dict(), sort_keys=True) + "\n")
        if ledger_path is None:
            ledger_path = str(out_path) + ".ledger.json"
    if ledger_path is not None:
        ledger.save(ledger_path)

    report.duration_seconds = time.monotonic() - started
    return result.store, report


_REPORT_TABLES = (
    "observed_events",
    "resources",
    "urls",
    "resource_urls",
    "resource_types",
    "problems",
    "problem_types",
    "submissions",
    "assessments",
    "collaborations",
    "collaboration_types",
    "feedbacks",
    "questions",
    "answers",
    "surveys",
    "course_users",
)
