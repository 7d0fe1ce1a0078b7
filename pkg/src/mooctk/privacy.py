"""Layered user identities and privacy partitions.

Identities are derived with a keyed PRF (HMAC-SHA256) in four layers: a global
user id, one course user id per course, and four mode-scoped ids per course
(observing, submitting, collaborating, feedback). Each layer lives in its own
integer namespace, so two tables can only be joined on users when the mapping
table linking their namespaces is included in the export. PII (age, country,
most frequent IP) stays in the ledger and is never written into any partition.
"""
from __future__ import annotations

import copy
import hashlib
import hmac
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from .schema import TABLE_NAMES, TABLE_SPECS, CourseStore
from .storeio import StoreIOError, table_to_csv_bytes

MIN_KEY_BYTES = 16

# Namespace tags occupy the high bits, keeping all id namespaces disjoint by
# construction while fitting in a signed 64-bit integer.
_NAMESPACE_TAGS = {
    "global": 1,
    "course": 2,
    "observed": 3,
    "submissions": 4,
    "collaborations": 5,
    "feedback": 6,
}
_TAG_SHIFT = 59
_LOW_MASK = (1 << _TAG_SHIFT) - 1

MODE_NAMES = ("observed", "submissions", "collaborations", "feedback")

# Mode tables present at every access level.
BASE_TABLES = (
    "observed_events",
    "resources",
    "urls",
    "resource_urls",
    "resource_types",
    "problems",
    "problem_types",
    "submissions",
    "assessments",
    "feedbacks",
    "questions",
    "answers",
    "surveys",
)
COLLABORATION_TABLES = ("collaborations", "collaboration_types")

LINKAGES = ("multi_course", "single_course", "table_level")

# How each mode table keys its users.
USER_KEY_COLUMNS = {
    "observed_events": ("user_id_observed", "observed"),
    "submissions": ("user_id", "submissions"),
    "collaborations": ("user_id", "collaborations"),
    "feedbacks": ("user_id", "feedback"),
}


class PrivacyError(Exception):
    """Refused request that would weaken the privacy partitioning."""


@dataclass(frozen=True)
class AccessLevel:
    linkage: str
    collaboration_included: bool

    def __post_init__(self):
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}")

    @property
    def name(self) -> str:
        suffix = "with_collaboration" if self.collaboration_included else "no_collaboration"
        return f"{self.linkage}__{suffix}"


ACCESS_LEVELS = tuple(
    AccessLevel(linkage, collab) for linkage in LINKAGES for collab in (True, False)
)


def tables_for_level(level: AccessLevel) -> tuple[str, ...]:
    tables = list(BASE_TABLES)
    if level.collaboration_included:
        tables.extend(COLLABORATION_TABLES)
    if level.linkage in ("multi_course", "single_course"):
        tables.append("course_users")
    if level.linkage == "multi_course":
        tables.append("global_users")
    return tuple(tables)


@dataclass(slots=True)
class UserPII:
    global_user_id: int
    age: int
    country: str
    most_frequent_ip: str


@dataclass(slots=True)
class ModeUserIds:
    observed_id: int
    submissions_id: int
    collaborations_id: int
    feedback_id: int

    def by_mode(self) -> dict[str, int]:
        return {
            "observed": self.observed_id,
            "submissions": self.submissions_id,
            "collaborations": self.collaborations_id,
            "feedback": self.feedback_id,
        }


@dataclass
class CourseIdentity:
    course_user_id: int
    modes: ModeUserIds


@dataclass
class UserIdentity:
    raw_user: str
    global_user_id: int
    courses: dict[str, CourseIdentity] = field(default_factory=dict)


class IdentityLedger:
    """Raw handle -> layered ids, plus the (never exported) PII table."""

    def __init__(self, courses: list[str]):
        self.courses = list(courses)
        self.users: dict[str, UserIdentity] = {}
        self.pii: dict[int, UserPII] = {}

    def identity(self, raw_user: str) -> UserIdentity:
        return self.users[raw_user]

    def mode_ids(self, raw_user: str, course_id: str) -> ModeUserIds:
        return self.users[raw_user].courses[course_id].modes

    def set_pii(self, raw_user: str, age: int, country: str, most_frequent_ip: str) -> None:
        gid = self.users[raw_user].global_user_id
        self.pii[gid] = UserPII(gid, age, country, most_frequent_ip)

    def global_user_rows(self) -> list[tuple[int, str, int]]:
        """(global_user_id, course_id, course_user_id) rows, canonically sorted."""
        rows = []
        for user in self.users.values():
            for course_id, ident in user.courses.items():
                rows.append((user.global_user_id, course_id, ident.course_user_id))
        rows.sort()
        return rows

    def merge(self, other: "IdentityLedger") -> None:
        """Fold another ledger (same key, different courses) into this one."""
        for course in other.courses:
            if course not in self.courses:
                self.courses.append(course)
        for raw_user, ident in other.users.items():
            mine = self.users.get(raw_user)
            if mine is None:
                self.users[raw_user] = ident
            else:
                if mine.global_user_id != ident.global_user_id:
                    raise PrivacyError(
                        f"ledgers disagree on global id for {raw_user!r}; keys differ?"
                    )
                mine.courses.update(ident.courses)
        self.pii.update(other.pii)

    def to_dict(self) -> dict:
        return {
            "courses": self.courses,
            "users": [
                {
                    "raw_user": u.raw_user,
                    "global_user_id": u.global_user_id,
                    "courses": {
                        cid: {
                            "course_user_id": ci.course_user_id,
                            "observed_id": ci.modes.observed_id,
                            "submissions_id": ci.modes.submissions_id,
                            "collaborations_id": ci.modes.collaborations_id,
                            "feedback_id": ci.modes.feedback_id,
                        }
                        for cid, ci in u.courses.items()
                    },
                }
                for u in self.users.values()
            ],
            "pii": [
                {
                    "global_user_id": p.global_user_id,
                    "age": p.age,
                    "country": p.country,
                    "most_frequent_ip": p.most_frequent_ip,
                }
                for p in self.pii.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IdentityLedger":
        ledger = cls(data["courses"])
        for entry in data["users"]:
            ident = UserIdentity(entry["raw_user"], entry["global_user_id"])
            for cid, ci in entry["courses"].items():
                ident.courses[cid] = CourseIdentity(
                    course_user_id=ci["course_user_id"],
                    modes=ModeUserIds(
                        ci["observed_id"],
                        ci["submissions_id"],
                        ci["collaborations_id"],
                        ci["feedback_id"],
                    ),
                )
            ledger.users[ident.raw_user] = ident
        for p in data["pii"]:
            ledger.pii[p["global_user_id"]] = UserPII(
                p["global_user_id"], p["age"], p["country"], p["most_frequent_ip"]
            )
        return ledger

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IdentityLedger":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise StoreIOError(f"cannot read identity ledger {path}: {exc}") from exc


def _prf_id(key: bytes, namespace: str, material: str, taken: set[int]) -> int:
    """Derive a fresh id in the namespace; rehash deterministically on the
    (astronomically unlikely) truncation collision."""
    tag = _NAMESPACE_TAGS[namespace]
    suffix = 0
    while True:
        message = f"{namespace}|{material}" + (f"|{suffix}" if suffix else "")
        digest = hmac.new(key, message.encode("utf-8"), hashlib.sha256).digest()
        value = (tag << _TAG_SHIFT) | (int.from_bytes(digest[:8], "big") & _LOW_MASK)
        if value not in taken:
            taken.add(value)
            return value
        suffix += 1


def derive_identities(raw_users: list[str], courses: list[str], secret_key: str | bytes) -> IdentityLedger:
    """Derive the full identity ledger for the given users and courses.

    Deterministic for a fixed key and input sets; ids are injective per
    namespace and carry no linkable structure without the ledger itself.
    """
    key = secret_key.encode("utf-8") if isinstance(secret_key, str) else bytes(secret_key)
    if len(key) < MIN_KEY_BYTES:
        raise PrivacyError(f"secret key must be at least {MIN_KEY_BYTES} bytes ({8 * MIN_KEY_BYTES} bits)")

    ledger = IdentityLedger(list(courses))
    taken: dict[str, set[int]] = {ns: set() for ns in _NAMESPACE_TAGS}
    # The grader sentinel must never collide with a real id (it cannot: tags
    # make every derived id non-zero).
    for raw_user in sorted(set(raw_users)):
        ident = UserIdentity(raw_user, _prf_id(key, "global", raw_user, taken["global"]))
        for course_id in courses:
            material = f"{course_id}|{raw_user}"
            ident.courses[course_id] = CourseIdentity(
                course_user_id=_prf_id(key, "course", material, taken["course"]),
                modes=ModeUserIds(
                    observed_id=_prf_id(key, "observed", material, taken["observed"]),
                    submissions_id=_prf_id(key, "submissions", material, taken["submissions"]),
                    collaborations_id=_prf_id(key, "collaborations", material, taken["collaborations"]),
                    feedback_id=_prf_id(key, "feedback", material, taken["feedback"]),
                ),
            )
        ledger.users[raw_user] = ident
    return ledger


@dataclass
class PartitionManifest:
    level_linkage: str
    collaboration_included: bool
    courses: list[str]
    included_tables: list[str]
    excluded_tables: list[str]
    id_namespaces: dict[str, str]
    checksums: dict[str, str]

    @property
    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.checksums):
            h.update(f"{name}:{self.checksums[name]}\n".encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "level": {
                "linkage": self.level_linkage,
                "collaboration_included": self.collaboration_included,
            },
            "courses": self.courses,
            "included_tables": self.included_tables,
            "excluded_tables": self.excluded_tables,
            "id_namespaces": self.id_namespaces,
            "checksums": self.checksums,
            "checksum": self.checksum,
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PartitionManifest":
        try:
            data = json.loads(Path(path).read_text())
            return cls(
                level_linkage=data["level"]["linkage"],
                collaboration_included=data["level"]["collaboration_included"],
                courses=data["courses"],
                included_tables=data["included_tables"],
                excluded_tables=data["excluded_tables"],
                id_namespaces=data["id_namespaces"],
                checksums=data["checksums"],
            )
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise StoreIOError(f"cannot read partition manifest {path}: {exc}") from exc


def _namespace_descriptions(level: AccessLevel) -> dict[str, str]:
    desc = {
        "observed_events.user_id_observed": "observing-mode user ids",
        "submissions.user_id": "submitting-mode user ids",
        "feedbacks.user_id": "feedback-mode user ids",
    }
    if level.collaboration_included:
        desc["collaborations.user_id"] = "collaborating-mode user ids"
    if level.linkage in ("multi_course", "single_course"):
        desc["course_users.course_user_id"] = "course-scoped user ids (links the four mode namespaces)"
    if level.linkage == "multi_course":
        desc["global_users.global_user_id"] = "global user ids (links course ids across courses)"
    return desc


def _jitter_timestamps(stores: list[CourseStore], seed: int) -> list[CourseStore]:
    """Remap every timestamp through one strictly monotone random map.

    Order (and therefore every ordering invariant, within and across tables)
    is preserved exactly, but exported instants no longer equal the real ones,
    so publicly visible times (forum posts) cannot be matched value-for-value.
    Stored durations are left as-is; they are data, not re-derived.
    """
    ts_columns = {
        table: [c for c, k in spec if k.rstrip("?") == "ts"]
        for table, (_cls, spec) in TABLE_SPECS.items()
    }
    values = set()
    for store in stores:
        for table, columns in ts_columns.items():
            for row in store.table(table):
                for column in columns:
                    v = getattr(row, column)
                    if v is not None:
                        values.add(v)
    rng = random.Random(seed)
    remap: dict[int, int] = {}
    prev_old = prev_new = None
    for v in sorted(values):
        if prev_old is None:
            new = v + rng.randint(-3600_000, 3600_000)
        else:
            gap = v - prev_old
            new = prev_new + max(1, round(gap * rng.uniform(0.5, 1.5)))
        remap[v] = new
        prev_old, prev_new = v, new

    jittered = []
    for store in stores:
        clone = copy.deepcopy(store)
        for table, columns in ts_columns.items():
            for row in clone.table(table):
                for column in columns:
                    v = getattr(row, column)
                    if v is not None:
                        setattr(row, column, remap[v])
        jittered.append(clone)
    return jittered


def export_partition(
    stores: list[CourseStore],
    ledger: IdentityLedger | None,
    level: AccessLevel,
    out_dir: str | os.PathLike,
    extra_tables: list[str] | None = None,
    timestamp_jitter_seed: int | None = None,
) -> PartitionManifest:
    """Write the table partition for one access level as CSV files + manifest.

    Layout: ``out_dir/<course_id>/<table>.csv`` per course, plus
    ``out_dir/global_users.csv`` at multi-course linkage, plus manifest.json.
    Requesting PII is refused outright. Timestamps are exported unmodified
    unless ``timestamp_jitter_seed`` asks for the order-preserving jitter.
    """
    for name in extra_tables or ():
        if name not in TABLE_NAMES or "pii" in name:
            raise PrivacyError(f"table {name!r} cannot be exported")

    included = list(tables_for_level(level))
    for name in extra_tables or ():
        base = tables_for_level(level)
        if name not in base and name not in included:
            raise PrivacyError(f"table {name!r} is not exportable at linkage {level.linkage}")

    if level.linkage == "multi_course" and ledger is None:
        raise PrivacyError("multi-course export requires the identity ledger")

    if timestamp_jitter_seed is not None:
        stores = _jitter_timestamps(stores, timestamp_jitter_seed)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums: dict[str, str] = {}
    course_table_names = [t for t in included if t != "global_users"]
    for store in stores:
        course_dir = out_dir / store.course_id
        course_dir.mkdir(exist_ok=True)
        for table in course_table_names:
            payload = table_to_csv_bytes(store, table)
            rel = f"{store.course_id}/{table}.csv"
            (out_dir / rel).write_bytes(payload)
            checksums[rel] = hashlib.sha256(payload).hexdigest()

    if "global_users" in included:
        lines = ["global_user_id,course_id,course_user_id"]
        course_ids = {s.course_id for s in stores}
        for gid, course_id, cuid in ledger.global_user_rows():
            if course_id in course_ids:
                lines.append(f"{gid},{course_id},{cuid}")
        payload = ("\n".join(lines) + "\n").encode("utf-8")
        (out_dir / "global_users.csv").write_bytes(payload)
        checksums["global_users.csv"] = hashlib.sha256(payload).hexdigest()

    excluded = sorted(set(TABLE_NAMES) - set(course_table_names)) + ["user_pii"]
    if "global_users" not in included:
        excluded.append("global_users")
    manifest = PartitionManifest(
        level_linkage=level.linkage,
        collaboration_included=level.collaboration_included,
        courses=[s.course_id for s in stores],
        included_tables=sorted(included),
        excluded_tables=sorted(excluded),
        id_namespaces=_namespace_descriptions(level),
        checksums=checksums,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


@dataclass
class LinkabilityReport:
    """Which user-key joins a partition permits, per pair of user-bearing tables."""

    joinable_pairs: dict[tuple[str, str], bool]
    cross_mode_paths: int
    cross_course_paths: int
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "joinable_pairs": {f"{a}~{b}": v for (a, b), v in sorted(self.joinable_pairs.items())},
            "cross_mode_paths": self.cross_mode_paths,
            "cross_course_paths": self.cross_course_paths,
            "warnings": self.warnings,
        }


def _read_csv_column(path: Path, column: str) -> list[str]:
    import csv as _csv

    with open(path, encoding="utf-8", newline="") as fh:
        reader = _csv.DictReader(fh)
        return [row[column] for row in reader]


def audit_linkability(partition_dir: str | os.PathLike) -> LinkabilityReport:
    """Inspect an exported partition and report every possible user-key join.

    Two mode tables are joinable when the course user table present in the
    partition maps between their id namespaces (or when their key sets overlap
    directly, which the disjoint-namespace construction should make impossible).
    Cross-course joins require the global user table.
    """
    partition_dir = Path(partition_dir)
    manifest = PartitionManifest.load(partition_dir / "manifest.json")
    has_course_users = "course_users" in manifest.included_tables
    has_global = "global_users" in manifest.included_tables

    mode_tables = [t for t in USER_KEY_COLUMNS if t in manifest.included_tables]
    per_course_ids: dict[str, dict[str, set[str]]] = {}
    course_user_ids: dict[str, set[str]] = {}
    for course in manifest.courses:
        per_course_ids[course] = {}
        for table in mode_tables:
            column = USER_KEY_COLUMNS[table][0]
            path = partition_dir / course / f"{table}.csv"
            per_course_ids[course][table] = set(_read_csv_column(path, column))
        if has_course_users:
            path = partition_dir / course / "course_users.csv"
            course_user_ids[course] = set(_read_csv_column(path, "course_user_id"))

    joinable: dict[tuple[str, str], bool] = {}
    cross_mode = 0
    for i, ta in enumerate(mode_tables):
        for tb in mode_tables[i + 1 :]:
            direct = any(
                per_course_ids[c][ta] & per_course_ids[c][tb] for c in manifest.courses
            )
            via_user_table = has_course_users
            possible = direct or via_user_table
            joinable[(ta, tb)] = possible
            if possible:
                cross_mode += 1

    cross_course = 0
    courses = manifest.courses
    for i, ca in enumerate(courses):
        for cb in courses[i + 1 :]:
            shared_course_ids = bool(
                course_user_ids.get(ca, set()) & course_user_ids.get(cb, set())
            )
            shared_mode_ids = any(
                per_course_ids[ca][t] & per_course_ids[cb][t] for t in mode_tables
            )
            if has_global or shared_course_ids or shared_mode_ids:
                cross_course += 1

    warnings = []
    if "collaborations" in manifest.included_tables and "observed_events" in manifest.included_tables:
        warnings.append(
            "collaboration timestamps can be correlated with observed events; "
            "publicly visible forum posts may re-identify their authors"
        )
    return LinkabilityReport(joinable, cross_mode, cross_course, warnings)
