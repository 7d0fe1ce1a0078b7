"""Statistics over time/cohort/space cuts, and the video-vs-homework
correlation study.

A statistic names an aggregation over one mode table; cuts restrict it to a
time window, a cohort of course users, and a space (country) grouping or
filter. Everything runs against a TableView, which is either a full store or
the table subset of an exported partition, so capability errors surface when a
statistic needs a table the caller's access level does not include.
"""
from __future__ import annotations

import json
import os
import statistics as stats
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from .privacy import USER_KEY_COLUMNS, AccessLevel, PartitionManifest, tables_for_level
from .schema import CourseStore, CourseUser, format_timestamp
from .storeio import load_csv_table, load_store
from .trees import reconstruct_problem_tree

# Timestamp column per mode table.
TIME_COLUMNS = {
    "observed_events": "observed_event_timestamp",
    "submissions": "submission_timestamp",
    "collaborations": "collaboration_timestamp",
    "feedbacks": "feedback_timestamp",
}

# Numeric fields a measure may sum, per mode table.
MEASURE_FIELDS = {
    "observed_events": ("observed_event_duration",),
    "submissions": ("submission_attempt_number",),
    "collaborations": (),
    "feedbacks": (),
}

AGGREGATIONS = ("count", "mean", "sum", "distribution")

# Course-user fields a cohort predicate may reference. PII attributes are not
# queryable at any level.
COHORT_FIELDS = ("final_grade", "user_type", "certified", "country")
PII_FIELDS = ("age", "most_frequent_ip", "ip", "global_user_id", "raw_user")


class CapabilityError(Exception):
    """The request needs a table the current access level does not include."""


class AnalyticsError(Exception):
    """Malformed statistic, predicate, or study input."""


class TableView:
    """Read access to whichever tables an access level exposes."""

    def __init__(self, tables: dict[str, list], label: str = "store"):
        self._tables = tables
        self.label = label

    @classmethod
    def from_store(cls, store: CourseStore, level: AccessLevel | None = None) -> "TableView":
        if level is None:
            names = [n for n in store.__dataclass_fields__ if n not in ("course_id", "schema_version")]
            return cls({n: store.table(n) for n in names}, label=store.course_id)
        allowed = set(tables_for_level(level))
        return cls(
            {n: store.table(n) for n in allowed if n != "global_users"},
            label=f"{store.course_id}@{level.name}",
        )

    @classmethod
    def from_partition(cls, partition_dir: str | os.PathLike, course_id: str | None = None) -> "TableView":
        partition_dir = Path(partition_dir)
        manifest = PartitionManifest.load(partition_dir / "manifest.json")
        if course_id is None:
            if len(manifest.courses) != 1:
                raise AnalyticsError(
                    f"partition holds {len(manifest.courses)} courses; pass course_id"
                )
            course_id = manifest.courses[0]
        tables = {}
        for name in manifest.included_tables:
            if name == "global_users":
                continue
            tables[name] = load_csv_table(partition_dir / course_id / f"{name}.csv", name)
        return cls(tables, label=f"{course_id}@{manifest.level_linkage}")

    @classmethod
    def open(cls, path: str | os.PathLike) -> "TableView":
        """Open either a store (SQLite file / CSV dir) or a partition dir."""
        path = Path(path)
        if path.is_dir() and (path / "manifest.json").is_file():
            return cls.from_partition(path)
        return cls.from_store(load_store(path))

    @property
    def available_tables(self) -> tuple[str, ...]:
        return tuple(sorted(self._tables))

    def has(self, name: str) -> bool:
        return name in self._tables

    def table(self, name: str) -> list:
        if name not in self._tables:
            raise CapabilityError(f"table {name!r} is not available at this access level")
        return self._tables[name]


# ---------------------------------------------------------------------------
# cohorts


@dataclass(frozen=True)
class CohortPredicate:
    """Tiny filter language over course-user rows: ``certified``,
    ``final_grade>=0.6``, ``user_type=student``, ``country!=US``."""

    text: str
    field_name: str
    op: str
    value: object

    _OPS = (">=", "<=", "!=", ">", "<", "=")

    @classmethod
    def parse(cls, text: str) -> "CohortPredicate":
        raw = text.strip()
        for op in cls._OPS:
            if op in raw:
                field_name, value_text = raw.split(op, 1)
                field_name = field_name.strip()
                value_text = value_text.strip()
                break
        else:
            field_name, op, value_text = raw, "=", "1"
        if field_name in PII_FIELDS:
            raise CapabilityError(f"cohort predicates may not reference PII field {field_name!r}")
        if field_name not in COHORT_FIELDS:
            raise AnalyticsError(
                f"unknown cohort field {field_name!r}; allowed: {', '.join(COHORT_FIELDS)}"
            )
        value: object
        if field_name == "final_grade":
            value = float(value_text)
        elif field_name == "certified":
            value = value_text.lower() in ("1", "true", "yes")
        else:
            value = value_text
        return cls(text=raw, field_name=field_name, op=op, value=value)

    def matches(self, user: CourseUser) -> bool:
        have = getattr(user, self.field_name)
        if self.op == "=":
            return have == self.value
        if self.op == "!=":
            return have != self.value
        if self.op == ">=":
            return have >= self.value
        if self.op == "<=":
            return have <= self.value
        if self.op == ">":
            return have > self.value
        return have < self.value


def select_cohort(view: TableView, predicate: CohortPredicate | None) -> set[int]:
    """course_user_ids of exactly the users satisfying the predicate."""
    users = view.table("course_users")
    if predicate is None:
        return {u.course_user_id for u in users}
    return {u.course_user_id for u in users if predicate.matches(u)}


# ---------------------------------------------------------------------------
# statistics


@dataclass
class CutSpec:
    window_start: int | None = None  # inclusive, epoch ms
    window_end: int | None = None  # exclusive
    cohort: CohortPredicate | None = None
    country: str | None = None
    by_country: bool = False


@dataclass
class StatisticDef:
    name: str
    table: str
    measure: str = "count"  # "count" or a numeric field name
    aggregation: str = "count"
    by_country: bool = False
    cohort: str | None = None

    def __post_init__(self):
        if self.table not in TIME_COLUMNS:
            raise AnalyticsError(f"statistic table must be a mode table, got {self.table!r}")
        if self.aggregation not in AGGREGATIONS:
            raise AnalyticsError(f"unknown aggregation {self.aggregation!r}")
        if self.measure != "count" and self.measure not in MEASURE_FIELDS[self.table]:
            raise AnalyticsError(f"{self.table} has no numeric measure {self.measure!r}")


@dataclass
class StatResult:
    name: str
    rows: list[tuple[str, object, int]]  # (group, value, n), canonically sorted
    cohort_size: int
    window: tuple[int | None, int | None]

    def to_csv_text(self) -> str:
        lines = ["group,value,n"]
        for group, value, n in self.rows:
            lines.append(f"{group},{format_value(value)},{n}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        start, end = self.window
        return {
            "name": self.name,
            "cohort_size": self.cohort_size,
            "window": {
                "start": format_timestamp(start) if start is not None else None,
                "end": format_timestamp(end) if end is not None else None,
            },
            "rows": [
                {"group": g, "value": v, "n": n} for g, v, n in self.rows
            ],
        }


def format_value(value) -> str:
    """Canonical statistic-value rendering: integers (and integral floats) as
    plain digits, other floats in shortest round-trip form. Query clients
    reproduce this rule, so outputs stay byte-comparable."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def _user_maps(view: TableView, table: str) -> dict[int, CourseUser]:
    column, mode = USER_KEY_COLUMNS[table]
    attr = f"{mode}_id"
    return {getattr(u, attr): u for u in view.table("course_users")}


def compute_statistic(view: TableView, stat: StatisticDef, cuts: CutSpec | None = None) -> StatResult:
    """Aggregate the statistic over rows inside the window, users inside the
    cohort, grouped by country when asked.

    Semantics: a unit is a cohort user with at least one matching row; its
    value is the row count (measure "count") or the sum of the measure field.
    count = matching rows, sum = total of unit values, mean = mean of unit
    values, distribution = one output row per distinct unit value with the
    number of units having it. Groups with no matching rows are absent.
    """
    cuts = cuts or CutSpec()
    cohort_pred = cuts.cohort
    if cohort_pred is None and stat.cohort:
        cohort_pred = CohortPredicate.parse(stat.cohort)
    by_country = cuts.by_country or stat.by_country

    # Cohort and space cuts need the course-user table; a plain windowed
    # aggregate keys its units by the table's own mode ids and runs anywhere.
    needs_users = by_country or cuts.country is not None or cohort_pred is not None
    rows = view.table(stat.table)
    users_by_mode_id = _user_maps(view, stat.table) if needs_users else None
    cohort_ids = select_cohort(view, cohort_pred) if needs_users else None

    user_column, _ = USER_KEY_COLUMNS[stat.table]
    time_column = TIME_COLUMNS[stat.table]

    per_unit: dict[tuple[str, int], list[float]] = {}
    row_counts: dict[str, int] = {}
    for row in rows:
        ts = getattr(row, time_column)
        if cuts.window_start is not None and ts < cuts.window_start:
            continue
        if cuts.window_end is not None and ts >= cuts.window_end:
            continue
        unit_key = getattr(row, user_column)
        group = "all"
        if needs_users:
            user = users_by_mode_id.get(unit_key)
            if user is None or user.course_user_id not in cohort_ids:
                continue
            if cuts.country is not None and user.country != cuts.country:
                continue
            unit_key = user.course_user_id
            if by_country:
                group = user.country
        row_counts[group] = row_counts.get(group, 0) + 1
        values = per_unit.setdefault((group, unit_key), [])
        values.append(1.0 if stat.measure == "count" else float(getattr(row, stat.measure)))

    group_units: dict[str, list[float]] = {}
    for (group, _unit), values in per_unit.items():
        unit_value = float(len(values)) if stat.measure == "count" else _exact_sum(values)
        group_units.setdefault(group, []).append(unit_value)

    out: list[tuple[str, object, int]] = []
    for group in sorted(group_units):
        units = group_units[group]
        n = len(units)
        if stat.aggregation == "count":
            out.append((group, row_counts[group], n))
        elif stat.aggregation == "sum":
            out.append((group, _maybe_int(_exact_sum(units)), n))
        elif stat.aggregation == "mean":
            out.append((group, _exact_sum(units) / n, n))
        else:  # distribution
            histogram: dict[float, int] = {}
            for value in units:
                histogram[value] = histogram.get(value, 0) + 1
            for value in sorted(histogram):
                out.append((group, _maybe_int(value), histogram[value]))
    out.sort(key=lambda r: (r[0], float(r[1])))
    cohort_size = len(cohort_ids) if cohort_ids is not None else len({k for _, k in per_unit})
    return StatResult(
        name=stat.name,
        rows=out,
        cohort_size=cohort_size,
        window=(cuts.window_start, cuts.window_end),
    )


def _exact_sum(values: list[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def _maybe_int(value: float) -> object:
    return int(value) if float(value).is_integer() else value


def load_statistics(path: str | os.PathLike | None = None) -> dict[str, StatisticDef]:
    """Load the named-statistic registry (the packaged defaults by default)."""
    if path is None:
        text = importlib_resources.files("mooctk").joinpath("data/statistics.json").read_text()
    else:
        text = Path(path).read_text()
    defs = {}
    for entry in json.loads(text):
        stat = StatisticDef(
            name=entry["name"],
            table=entry["table"],
            measure=entry.get("measure", "count"),
            aggregation=entry.get("aggregation", "count"),
            by_country=entry.get("by_country", False),
            cohort=entry.get("cohort"),
        )
        defs[stat.name] = stat
    return defs


# ---------------------------------------------------------------------------
# the video-time vs homework-performance study


@dataclass
class CorrelationResult:
    week_index: int
    problem_id: int
    pairs: dict[int, tuple[float, int]]  # course_user_id -> (video_seconds, correct_submissions)
    r: float | None
    n: int
    undefined_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "week_index": self.week_index,
            "problem_id": self.problem_id,
            "n": self.n,
            "r": self.r,
            "undefined_reason": self.undefined_reason,
        }


def pearson(xs: list[float], ys: list[float]) -> tuple[float | None, str | None]:
    """Pearson r, or (None, reason) when undefined; never returns NaN."""
    if len(xs) < 2:
        return None, "fewer than two data points"
    try:
        return stats.correlation(xs, ys), None
    except stats.StatisticsError:
        return None, "zero variance"


def video_homework_correlation(view: TableView, problem_id: int) -> CorrelationResult:
    """The five-step study for one homework module.

    1. Window = [release, soft deadline (else hard)] of the homework root.
    2. Video resources = resources of type video linked to at least one url.
    3. Per user: seconds observed on those resources inside the window.
    4. Per user: submissions on the homework's leaves inside the window.
    5. Correct = submissions whose best assessment grade is 1.0.
    Pearson r is computed over users with at least one value in either column.
    """
    problems = view.table("problems")
    by_id = {p.problem_id: p for p in problems}
    root = by_id.get(problem_id)
    if root is None:
        raise AnalyticsError(f"no problem {problem_id}")
    release = root.problem_release_timestamp
    deadline = root.problem_soft_deadline_timestamp or root.problem_hard_deadline_timestamp
    if release is None or deadline is None:
        raise AnalyticsError(
            f"problem {problem_id} ({root.problem_name!r}) lacks release/deadline timestamps"
        )

    releases = sorted(
        p.problem_release_timestamp
        for p in problems
        if p.problem_parent_id is None and p.problem_release_timestamp is not None
    )
    week_index = releases.index(release) + 1

    leaf_ids: set[int] = set()
    children: dict[int, list[int]] = {}
    for p in problems:
        if p.problem_parent_id is not None:
            children.setdefault(p.problem_parent_id, []).append(p.problem_id)
    stack = [problem_id]
    while stack:
        pid = stack.pop()
        kids = children.get(pid)
        if not kids:
            leaf_ids.add(pid)
        else:
            stack.extend(kids)

    video_type_ids = {
        rt.resource_type_id for rt in view.table("resource_types") if rt.resource_type_name == "video"
    }
    linked = {link.resource_id for link in view.table("resource_urls")}
    video_resources = {
        r.resource_id
        for r in view.table("resources")
        if r.resource_type_id in video_type_ids and r.resource_id in linked
    }

    observed_users = _user_maps(view, "observed_events")
    submission_users = _user_maps(view, "submissions")

    video_seconds: dict[int, float] = {}
    for event in view.table("observed_events"):
        if event.resource_id not in video_resources:
            continue
        ts = event.observed_event_timestamp
        if not (release <= ts <= deadline):
            continue
        user = observed_users.get(event.user_id_observed)
        if user is None:
            continue
        video_seconds[user.course_user_id] = (
            video_seconds.get(user.course_user_id, 0.0) + event.observed_event_duration
        )

    best_grade: dict[int, float] = {}
    for a in view.table("assessments"):
        prev = best_grade.get(a.submission_id)
        if prev is None or a.assessment_grade > prev:
            best_grade[a.submission_id] = a.assessment_grade

    correct_counts: dict[int, int] = {}
    for sub in view.table("submissions"):
        if sub.problem_id not in leaf_ids:
            continue
        ts = sub.submission_timestamp
        if not (release <= ts <= deadline):
            continue
        user = submission_users.get(sub.user_id)
        if user is None:
            continue
        cuid = user.course_user_id
        correct_counts.setdefault(cuid, 0)
        if best_grade.get(sub.submission_id) == 1.0:
            correct_counts[cuid] += 1

    user_ids = sorted(set(video_seconds) | set(correct_counts))
    pairs = {
        uid: (video_seconds.get(uid, 0.0), correct_counts.get(uid, 0)) for uid in user_ids
    }
    xs = [pairs[uid][0] for uid in user_ids]
    ys = [float(pairs[uid][1]) for uid in user_ids]
    r, reason = pearson(xs, ys)
    return CorrelationResult(
        week_index=week_index,
        problem_id=problem_id,
        pairs=pairs,
        r=r,
        n=len(user_ids),
        undefined_reason=reason,
    )


def resolve_problem(view: TableView, ref: str) -> int:
    """Accept a problem id or a problem name; return the id."""
    problems = view.table("problems")
    if ref.isdigit() and any(p.problem_id == int(ref) for p in problems):
        return int(ref)
    matches = [p.problem_id for p in problems if p.problem_name == ref]
    if not matches:
        raise AnalyticsError(f"no problem named {ref!r}")
    return matches[0]


def depth_first_leaves(view_or_store) -> list[int]:
    """Leaf problem ids in depth-first forest order (IRT column order)."""
    problems = view_or_store.table("problems")
    roots = reconstruct_problem_tree(problems)
    order: list[int] = []

    def walk(node):
        if not node.children:
            order.append(node.problem_id)
        for child in node.children:
            walk(child)

    for root in roots:
        walk(root)
    return order
