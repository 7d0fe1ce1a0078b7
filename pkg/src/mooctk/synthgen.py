"""Parameterized synthetic courses: structure, raw event logs, roster, and a
ground-truth ledger that records every count, mapping, thread topology, and
planted statistic the test suites assert against.

Ground truth is computed while emitting, never re-derived from the pipeline
under test. PII fields in the roster get sentinel values (impossible ages,
the ZZ country code, TEST-NET-3 addresses) that appear nowhere else in the
corpus, so leak scans are exact.
"""
from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from .schema import format_timestamp

class GenError(ValueError):
    """The requested corpus is infeasible or a GenSpec value is out of range."""

COURSE_START_MS = 1772409600000  # 2026-03-02T00:00:00Z, a Monday
WEEK_MS = 7 * 86400 * 1000
DAY_MS = 86400 * 1000

DEFAULT_COUNTRIES = {
    "US": 0.22,
    "IN": 0.18,
    "CN": 0.12,
    "BR": 0.10,
    "DE": 0.09,
    "FR": 0.08,
    "EG": 0.08,
    "MN": 0.07,
    "CO": 0.06,
}

ANSWER_CHOICES = ("excellent", "good", "fair", "poor", "too hard", "too easy")
OS_CHOICES = ("linux", "macos", "windows")
PII_COUNTRY_SENTINEL = "ZZ"

VERBOSE_KEYS = {
    "raw_user": "student_account_unique_handle_identifier",
    "event_kind": "behavioral_interaction_event_category_designation",
    "uri": "course_material_resource_uniform_identifier_path",
    "url": "web_browser_navigation_destination_page_address",
    "timestamp": "coordinated_universal_time_event_occurrence_timestamp",
    "payload": "supplementary_event_interaction_payload_attributes",
    "ip": "originating_network_internet_protocol_address",
    "os": "client_operating_system_platform_designation",
    "agent": "client_browser_user_agent_identification_string",
}
VERBOSE_KIND_OF = {
    "page_view": "resource_page_view_interaction_event",
    "video_play": "lecture_video_playback_interaction_event",
    "problem_check": "problem_answer_correctness_check_submission_event",
    "problem_save": "problem_answer_intermediate_draft_save_event",
    "forum_post": "discussion_forum_post_authoring_interaction_event",
    "forum_vote": "discussion_forum_post_voting_interaction_event",
    "wiki_edit": "collaborative_wiki_page_revision_interaction_event",
    "survey_answer": "course_experience_survey_response_submission_event",
}
VERBOSE_PAYLOAD_KEY_OF = {
    "answer": "submitted_answer_response_content_body",
    "correct": "automated_assessment_correctness_determination",
    "grade": "fractional_credit_grade_awarded_proportion",
    "post": "discussion_forum_post_unique_handle_identifier",
    "parent": "discussion_forum_parent_post_handle_reference",
    "title": "discussion_forum_post_subject_title_text",
    "body": "discussion_forum_post_message_body_text",
    "direction": "vote_direction_indicator_value",
    "text": "wiki_page_revision_content_body_text",
    "question": "survey_question_unique_handle_identifier",
}


@dataclass
class GenSpec:
    seed: int = 0
    users: int = 120
    weeks: int = 4
    videos_per_week: int = 4
    pages_per_week: int = 3
    problems_per_homework: tuple[int, ...] = (4, 3)
    certificate_fraction: float = 0.3
    countries: dict[str, float] | None = None
    target_events: int | None = None
    planted_r: float | None = None
    exact_linear: bool = False
    verbose: bool = False

    def validate(self) -> None:
        if self.users < 0:
            raise GenError("users must be non-negative")
        if self.weeks < 1:
            raise GenError("weeks must be at least 1")
        if not (0.0 <= self.certificate_fraction <= 1.0):
            raise GenError("certificate_fraction must be in [0,1]")
        if not self.problems_per_homework or any(n < 1 for n in self.problems_per_homework):
            raise GenError("each homework needs at least one sub-problem branch")
        if self.videos_per_week < 1 or self.pages_per_week < 1:
            raise GenError("need at least one video and one page per week")
        if self.planted_r is not None:
            if not (-1.0 <= self.planted_r <= 1.0):
                raise GenError("planted_r must be in [-1,1]")
            if self.users < 3:
                raise GenError("planting a correlation needs at least 3 users")
        if self.target_events is not None and self.users > 0:
            if self.target_events < self.users:
                raise GenError(
                    f"target of {self.target_events} events cannot cover {self.users} users"
                )


@dataclass
class GroundTruth:
    course_id: str
    seed: int
    user_handles: list[str] = field(default_factory=list)
    certified_handles: list[str] = field(default_factory=list)
    country_of: dict[str, str] = field(default_factory=dict)
    final_grade_of: dict[str, float] = field(default_factory=dict)
    table_counts: dict[str, int] = field(default_factory=dict)
    resource_count: int = 0
    url_count: int = 0
    link_count: int = 0
    problem_count: int = 0
    lines_emitted: int = 0
    thread_parent: dict[str, str | None] = field(default_factory=dict)
    planted: dict[str, dict] = field(default_factory=dict)
    homework_uris: list[str] = field(default_factory=list)
    first_graded_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "course_id": self.course_id,
            "seed": self.seed,
            "user_handles": self.user_handles,
            "certified_handles": self.certified_handles,
            "country_of": self.country_of,
            "final_grade_of": self.final_grade_of,
            "table_counts": self.table_counts,
            "resource_count": self.resource_count,
            "url_count": self.url_count,
            "link_count": self.link_count,
            "problem_count": self.problem_count,
            "lines_emitted": self.lines_emitted,
            "thread_parent": self.thread_parent,
            "planted": self.planted,
            "homework_uris": self.homework_uris,
            "first_graded_pairs": self.first_graded_pairs,
        }

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GroundTruth":
        data = json.loads(Path(path).read_text())
        gt = cls(course_id=data["course_id"], seed=data["seed"])
        for key, value in data.items():
            setattr(gt, key, value)
        return gt


@dataclass
class GenResult:
    out_dir: Path
    raw_log: Path
    structure_path: Path
    roster_path: Path
    ground_truth_path: Path
    ground_truth: GroundTruth
    adapter: str


def _weighted_choice(rng: random.Random, weights: dict[str, float]) -> str:
    total = sum(weights.values())
    roll = rng.random() * total
    acc = 0.0
    for key, weight in weights.items():
        acc += weight
        if roll <= acc:
            return key
    return key  # floating point slack lands on the last key


def _url_of(uri: str) -> str:
    return f"https://courses.synth.example.edu/{uri}"


def _build_structure(spec: GenSpec, course_id: str, gt: GroundTruth) -> dict:
    fixed = [
        ("Course handbook", "res/book", "book"),
        ("Course wiki", "res/wiki", "wiki"),
        ("Discussion forum", "res/forum", "forums"),
        ("Syllabus", "res/syllabus", "tutorials"),
    ]
    resources = [
        {"name": name, "uri": uri, "type": type_name, "urls": [_url_of(uri)]}
        for name, uri, type_name in fixed
    ]
    n_resources = len(fixed)
    n_links = len(fixed)
    page_types = ("exercises", "tutorials")
    for w in range(1, spec.weeks + 1):
        week_uri = f"res/week{w:02d}"
        children = []
        for v in range(spec.videos_per_week):
            uri = f"{week_uri}/video{v}"
            # videos also appear on the week page: the uri/url mapping is many-to-many
            children.append(
                {"name": f"Week {w} video {v}", "uri": uri, "type": "video",
                 "urls": [_url_of(uri), _url_of(week_uri)]}
            )
            n_resources += 1
            n_links += 2
        for p in range(spec.pages_per_week):
            uri = f"{week_uri}/page{p}"
            children.append(
                {"name": f"Week {w} page {p}", "uri": uri,
                 "type": page_types[p % len(page_types)], "urls": [_url_of(uri)]}
            )
            n_resources += 1
            n_links += 1
        resources.append(
            {"name": f"Week {w} lectures", "uri": week_uri, "type": "lecture",
             "urls": [_url_of(week_uri)], "children": children}
        )
        n_resources += 1
        n_links += 1

    problems = []
    n_problems = 0
    for w in range(1, spec.weeks + 1):
        release = COURSE_START_MS + (w - 1) * WEEK_MS
        hw_uri = f"prob/hw{w:02d}"
        gt.homework_uris.append(hw_uri)
        branches = []
        for i, leaf_count in enumerate(spec.problems_per_homework, start=1):
            leaves = [
                {"name": f"hw{w} p{i}.{j}", "uri": f"{hw_uri}/p{i}/q{j}"}
                for j in range(1, leaf_count + 1)
            ]
            branches.append({"name": f"hw{w} problem {i}", "uri": f"{hw_uri}/p{i}", "children": leaves})
            n_problems += 1 + leaf_count
        problems.append(
            {
                "name": f"homework {w}",
                "uri": hw_uri,
                "type": "homework",
                "release": format_timestamp(release),
                "soft_deadline": format_timestamp(release + 5 * DAY_MS),
                "hard_deadline": format_timestamp(release + 6 * DAY_MS),
                "children": branches,
            }
        )
        n_problems += 1

    survey_start = COURSE_START_MS + (spec.weeks - 1) * WEEK_MS
    surveys = [
        {
            "start": format_timestamp(survey_start),
            "end": format_timestamp(survey_start + WEEK_MS),
            "questions": [
                {"handle": "survey/q1", "content": "Overall course rating", "type": "rating"},
                {"handle": "survey/q2", "content": "Handbook usefulness rating", "type": "rating",
                 "resource_uri": "res/book"},
            ],
        }
    ]

    gt.resource_count = n_resources
    gt.url_count = n_resources  # every resource has exactly one url of its own
    gt.link_count = n_links
    gt.problem_count = n_problems
    return {
        "course_id": course_id,
        "resources": resources,
        "problems": problems,
        "surveys": surveys,
    }


class _Emitter:
    """Collects raw events, tracking the expected table counts as it goes."""

    def __init__(self, gt: GroundTruth):
        self.events: list[tuple[int, int, dict]] = []
        self.gt = gt
        self.counts = {
            "observed_events": 0,
            "submissions": 0,
            "assessments": 0,
            "collaborations": 0,
            "feedbacks": 0,
        }
        self.answers_seen: set[str] = set()
        self._seq = 0

    def emit(self, user: str, kind: str, uri: str, url: str, ts: int,
             payload: dict | None, ip: str, os_name: str, agent: str) -> None:
        self._seq += 1
        self.events.append(
            (
                ts,
                self._seq,
                {
                    "raw_user": user,
                    "event_kind": kind,
                    "uri": uri,
                    "url": url,
                    "timestamp": format_timestamp(ts),
                    "payload": payload or {},
                    "ip": ip,
                    "os": os_name,
                    "agent": agent,
                },
            )
        )
        if kind in ("page_view", "video_play"):
            self.counts["observed_events"] += 1
        elif kind == "problem_check":
            self.counts["submissions"] += 1
            self.counts["assessments"] += 1
        elif kind == "problem_save":
            self.counts["submissions"] += 1
        elif kind in ("forum_post", "forum_vote"):
            self.counts["collaborations"] += 1
            self.counts["observed_events"] += 1  # forum access is also observed
        elif kind == "wiki_edit":
            self.counts["collaborations"] += 1
        elif kind == "survey_answer":
            self.counts["feedbacks"] += 1
            self.answers_seen.add(payload["answer"])


def _plant_pairs(spec: GenSpec, rng: random.Random) -> list[tuple[int, int]]:
    """(video_seconds, correct_submissions) per user for one homework week."""
    pairs = []
    if spec.exact_linear:
        for _ in range(spec.users):
            y = rng.randint(0, 30)
            pairs.append((60 * y, y))
        if len({y for _, y in pairs}) == 1:  # force variance
            pairs[0] = (60 * (pairs[0][1] + 5), pairs[0][1] + 5)
        return pairs
    rho = spec.planted_r if spec.planted_r is not None else 0.0
    for _ in range(spec.users):
        zx = rng.gauss(0.0, 1.0)
        zy = rng.gauss(0.0, 1.0)
        x = int(round(1800 + 500 * zx))
        y_latent = 20.0 + 6.0 * (rho * zx + (1.0 - rho * rho) ** 0.5 * zy)
        pairs.append((max(60, x), max(0, int(round(y_latent)))))
    return pairs


def generate(spec: GenSpec, out_dir: str | os.PathLike) -> GenResult:
    """Write raw log + structure + roster + ground truth; deterministic per seed."""
    spec.validate()
    rng = random.Random(spec.seed)
    course_id = f"synth-{spec.seed}"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    gt = GroundTruth(course_id=course_id, seed=spec.seed)
    structure = _build_structure(spec, course_id, gt)

    users = [f"learner_{i:05d}" for i in range(spec.users)]
    gt.user_handles = list(users)
    certified_count = round(spec.users * spec.certificate_fraction)
    certified = set(rng.sample(range(spec.users), certified_count)) if spec.users else set()
    countries = spec.countries or DEFAULT_COUNTRIES
    roster = []
    for i, handle in enumerate(users):
        country = _weighted_choice(rng, countries)
        grade = rng.uniform(0.65, 1.0) if i in certified else rng.uniform(0.0, 0.6)
        grade = round(grade, 3)
        entry = {
            "raw_user": handle,
            "final_grade": grade,
            "user_type": "staff" if i % 37 == 36 else "student",
            "certified": i in certified,
            "country": country,
            "age": 7_000_000 + i,  # sentinel, impossible on purpose
            "pii_country": PII_COUNTRY_SENTINEL,
            "most_frequent_ip": f"203.0.113.{i % 251}",
        }
        roster.append(entry)
        gt.country_of[handle] = country
        gt.final_grade_of[handle] = grade
        if i in certified:
            gt.certified_handles.append(handle)

    emitter = _Emitter(gt)
    planting = spec.planted_r is not None or spec.exact_linear
    base_budget = None
    if spec.target_events is not None and spec.users > 0:
        base_budget = max(3, round(spec.target_events / (spec.users * spec.weeks)))

    ip_of = {u: f"198.51.100.{i % 200}" for i, u in enumerate(users)}
    os_of = {u: OS_CHOICES[i % len(OS_CHOICES)] for i, u in enumerate(users)}
    agent_of = {u: f"browser/{100 + i % 30}.0" for i, u in enumerate(users)}

    leaf_uris_of_week = {}
    for w in range(1, spec.weeks + 1):
        leaves = []
        for i, leaf_count in enumerate(spec.problems_per_homework, start=1):
            leaves.extend(f"prob/hw{w:02d}/p{i}/q{j}" for j in range(1, leaf_count + 1))
        leaf_uris_of_week[w] = leaves

    first_graded: set[tuple[str, str]] = set()
    post_registry: list[tuple[str, int]] = []  # (handle, timestamp)
    post_seq = 0

    for w in range(1, spec.weeks + 1):
        release = COURSE_START_MS + (w - 1) * WEEK_MS
        soft = release + 5 * DAY_MS
        week_uri = f"res/week{w:02d}"
        planted_pairs = _plant_pairs(spec, rng) if planting else None
        if planting:
            gt.planted[f"prob/hw{w:02d}"] = {
                "r": 1.0 if spec.exact_linear else spec.planted_r,
                "pairs": {users[i]: list(planted_pairs[i]) for i in range(spec.users)},
            }

        for i, user in enumerate(users):
            ip, os_name, agent = ip_of[user], os_of[user], agent_of[user]
            leaves = leaf_uris_of_week[w]

            if planting:
                x_seconds, correct_needed = planted_pairs[i]
                clock = release + 3_600_000 + (i % 96) * 3_600_000 // 2
                remaining = x_seconds
                v = 0
                while remaining > 0:
                    chunk = min(remaining, 1799)
                    uri = f"{week_uri}/video{v % spec.videos_per_week}"
                    emitter.emit(user, "video_play", uri, _url_of(uri), clock, None, ip, os_name, agent)
                    clock += chunk * 1000
                    remaining -= chunk
                    v += 1
                emitter.emit(user, "page_view", "res/book", _url_of("res/book"), clock, None, ip, os_name, agent)
                clock += 60_000
                wrong = rng.randint(0, 2) if correct_needed else rng.randint(1, 3)
                plan = ["right"] * correct_needed + ["wrong"] * wrong
                for k, outcome in enumerate(plan):
                    uri = leaves[k % len(leaves)]
                    emitter.emit(
                        user, "problem_check", uri, "", clock,
                        {"answer": f"ans_{w}_{i}_{k}", "correct": outcome == "right"},
                        ip, os_name, agent,
                    )
                    first_graded.add((user, uri))
                    clock += 30_000
                # social activity stays outside the homework window
                clock = max(clock, soft + 12 * 3_600_000 + (i % 500) * 1000)
                if rng.random() < 0.2:
                    post_seq += 1
                    handle = f"post_w{w}_{post_seq}"
                    emitter.emit(
                        user, "forum_post", "res/forum", _url_of("res/forum"), clock,
                        {"post": handle, "title": f"Thread {handle}", "body": handle},
                        ip, os_name, agent,
                    )
                    gt.thread_parent[handle] = None
                    post_registry.append((handle, clock))
                continue

            # organic activity; jitter keeps per-user measures from degenerating
            budget = base_budget if base_budget is not None else 9

            def jitter(n: int) -> int:
                return rng.randint(max(1, n - 2), n + 2)

            pages = jitter(max(1, round(budget * 0.38)))
            videos = jitter(max(1, round(budget * 0.22)))
            checks = jitter(max(1, round(budget * 0.27)))
            saves = rng.randint(0, max(1, round(budget * 0.04)))
            social = jitter(max(1, round(budget * 0.09)))

            clock = release + rng.randint(0, 2 * DAY_MS // 1000) * 1000
            series = []
            page_pool = (
                [f"{week_uri}/page{p}" for p in range(spec.pages_per_week)]
                + ["res/book", "res/syllabus", week_uri]
            )
            for _ in range(pages):
                series.append(("page_view", rng.choice(page_pool), None))
            for _ in range(videos):
                uri = f"{week_uri}/video{rng.randrange(spec.videos_per_week)}"
                series.append(("video_play", uri, None))
            skill = gt.final_grade_of[user]
            for k in range(checks):
                uri = rng.choice(leaves)
                correct = rng.random() < 0.25 + 0.7 * skill
                series.append(
                    ("problem_check", uri, {"answer": f"ans_{w}_{i}_{k}", "correct": correct})
                )
                first_graded.add((user, uri))
            for _ in range(saves):
                uri = rng.choice(leaves)
                series.append(("problem_save", uri, {"answer": "draft"}))
            for _ in range(social):
                roll = rng.random()
                if roll < 0.35 or not post_registry:
                    post_seq += 1
                    handle = f"post_w{w}_{post_seq}"
                    series.append(
                        ("forum_post", "res/forum",
                         {"post": handle, "title": f"Thread {handle}", "body": handle})
                    )
                elif roll < 0.75:
                    post_seq += 1
                    handle = f"post_w{w}_{post_seq}"
                    parent = rng.choice(post_registry)
                    series.append(
                        ("forum_post", "res/forum",
                         {"post": handle, "parent": parent[0], "body": handle})
                    )
                elif roll < 0.9:
                    parent = rng.choice(post_registry)
                    series.append(
                        ("forum_vote", "res/forum",
                         {"parent": parent[0], "direction": rng.choice(("+1", "-1"))})
                    )
                else:
                    series.append(("wiki_edit", "res/wiki", {"text": f"edit by {i} week {w}"}))

            post_ts = {h: t for h, t in post_registry}
            for kind, uri, payload in series:
                clock += rng.randint(30, 900) * 1000
                if payload and payload.get("parent"):
                    clock = max(clock, post_ts[payload["parent"]] + 1000)
                url = _url_of(uri) if kind not in ("problem_check", "problem_save") else ""
                emitter.emit(user, kind, uri, url, clock, payload, ip, os_name, agent)
                if kind == "forum_post":
                    gt.thread_parent[payload["post"]] = payload.get("parent")
                    post_registry.append((payload["post"], clock))
                    post_ts[payload["post"]] = clock

            if w == spec.weeks and rng.random() < 0.6:
                for handle_q in ("survey/q1", "survey/q2"):
                    clock += rng.randint(30, 300) * 1000
                    emitter.emit(
                        user, "survey_answer", "", "", clock,
                        {"question": handle_q, "answer": rng.choice(ANSWER_CHOICES)},
                        ip, os_name, agent,
                    )

    emitter.events.sort(key=lambda item: (item[0], item[1]))
    gt.lines_emitted = len(emitter.events)
    gt.first_graded_pairs = len(first_graded)
    gt.table_counts = {
        "observed_events": emitter.counts["observed_events"],
        "submissions": emitter.counts["submissions"],
        "assessments": emitter.counts["assessments"],
        "collaborations": emitter.counts["collaborations"],
        "feedbacks": emitter.counts["feedbacks"],
        "resources": gt.resource_count,
        "urls": gt.url_count,
        "resource_urls": gt.link_count,
        "resource_types": 8,
        "problems": gt.problem_count,
        "problem_types": 1,
        "collaboration_types": 4,
        "questions": 2,
        "answers": len(emitter.answers_seen),
        "surveys": 1,
        "course_users": len({e[2]["raw_user"] for e in emitter.events}),
    }

    log_name = "raw_events_verbose.jsonl" if spec.verbose else "raw_events.jsonl"
    raw_log = out_dir / log_name
    with open(raw_log, "w", encoding="utf-8") as fh:
        for _, _, event in emitter.events:
            fh.write(_format_line(event, spec.verbose))
            fh.write("\n")

    structure_path = out_dir / "structure.json"
    structure_path.write_text(json.dumps(structure, indent=1, sort_keys=True))
    roster_path = out_dir / "roster.json"
    roster_path.write_text(json.dumps(roster, indent=1, sort_keys=True))
    ground_truth_path = out_dir / "ground_truth.json"
    ground_truth_path.write_text(json.dumps(gt.to_dict(), indent=1, sort_keys=True))
    return GenResult(
        out_dir=out_dir,
        raw_log=raw_log,
        structure_path=structure_path,
        roster_path=roster_path,
        ground_truth_path=ground_truth_path,
        ground_truth=gt,
        adapter="verbose" if spec.verbose else "canonical",
    )


def _format_line(event: dict, verbose: bool) -> str:
    if not verbose:
        return json.dumps(event, sort_keys=True)
    obj = {"platform_behavioral_event_record_format_revision": "2.0"}
    for key, value in event.items():
        if key == "event_kind":
            obj[VERBOSE_KEYS[key]] = VERBOSE_KIND_OF[value]
        elif key == "payload":
            obj[VERBOSE_KEYS[key]] = {
                VERBOSE_PAYLOAD_KEY_OF.get(k, k): v for k, v in value.items()
            }
        else:
            obj[VERBOSE_KEYS[key]] = value
    return json.dumps(obj, sort_keys=True)
