"""Command-line entry point: gen, ingest, validate, partition, audit, stat,
correlate, export.

Exit codes: 0 success, 1 validation failure, 2 capability/access error,
3 I/O or parse error, 64 usage error. ``--json`` puts a machine-readable
summary on stdout. Key material comes from MOOCTK_SECRET_KEY or --key-file,
never from an argument value.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import analytics, exports, ingest as ingest_mod, privacy, storeio, synthgen
from .schema import format_timestamp, parse_timestamp
from .validation import validate_store

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CAPABILITY = 2
EXIT_IO = 3
EXIT_USAGE = 64

KEY_ENV_VAR = "MOOCTK_SECRET_KEY"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _read_key(args) -> str:
    if getattr(args, "key_file", None):
        try:
            return Path(args.key_file).read_text().strip()
        except OSError as exc:
            raise storeio.StoreIOError(f"cannot read key file: {exc}") from exc
    key = os.environ.get(KEY_ENV_VAR)
    if not key:
        raise privacy.PrivacyError(
            f"no secret key: set {KEY_ENV_VAR} or pass --key-file"
        )
    return key


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        json.dump(payload, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    elif human:
        print(human)


def _level_from_args(args) -> privacy.AccessLevel:
    return privacy.AccessLevel(args.level, not args.no_collaboration)


def _open_view(args) -> analytics.TableView:
    path = Path(args.in_paths[0])
    if path.is_dir() and (path / "manifest.json").is_file():
        return analytics.TableView.from_partition(path)
    store = storeio.load_store(path)
    if args.level:
        return analytics.TableView.from_store(store, _level_from_args(args))
    return analytics.TableView.from_store(store)


def cmd_gen(args) -> int:
    spec = synthgen.GenSpec(
        seed=args.seed,
        users=args.users,
        weeks=args.weeks,
        certificate_fraction=args.certificate_fraction,
        target_events=args.target_events,
        planted_r=args.planted_r,
        exact_linear=args.exact_linear,
        verbose=args.verbose_log,
    )
    if args.videos_per_week:
        spec.videos_per_week = args.videos_per_week
    if args.pages_per_week:
        spec.pages_per_week = args.pages_per_week
    result = synthgen.generate(spec, args.out)
    _emit(
        args,
        {
            "raw_log": str(result.raw_log),
            "structure": str(result.structure_path),
            "roster": str(result.roster_path),
            "ground_truth": str(result.ground_truth_path),
            "adapter": result.adapter,
            "lines": result.ground_truth.lines_emitted,
        },
        f"generated {result.ground_truth.lines_emitted} events under {result.out_dir}",
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = ingest_mod.IngestConfig.load(args.config) if args.config else ingest_mod.IngestConfig()
    if args.adapter:
        config.adapter = args.adapter
    if args.roster:
        config.roster_path = args.roster
    if args.duration_cap is not None:
        config.duration_cap_seconds = args.duration_cap
    config.secret_key = _read_key(args)
    structure = ingest_mod.CourseStructure.load(args.structure)
    sources = [(config.adapter, p) for p in args.in_paths]
    store, report = ingest_mod.ingest(sources, structure, config, out_path=args.out)
    _emit(
        args,
        report.to_dict(),
        f"ingested {report.rows_emitted} rows from {report.lines_read} lines "
        f"({report.lines_rejected} rejected) into {args.out}",
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    store = storeio.load_store(args.in_paths[0])
    report = validate_store(store)
    payload = report.to_dict()
    payload["store_checksum"] = store.checksum()
    if report.ok:
        _emit(args, payload, f"store valid ({store.course_id})")
        return EXIT_OK
    _emit(args, payload, "\n".join(report.lines()))
    return EXIT_VALIDATION


def cmd_partition(args) -> int:
    stores = [storeio.load_store(p) for p in args.in_paths]
    level = _level_from_args(args)
    ledger = None
    if args.ledger:
        ledger = privacy.IdentityLedger.load(args.ledger[0])
        for extra in args.ledger[1:]:
            ledger.merge(privacy.IdentityLedger.load(extra))
    manifest = privacy.export_partition(
        stores, ledger, level, args.out, timestamp_jitter_seed=args.jitter_seed
    )
    _emit(
        args,
        manifest.to_dict(),
        f"partition {level.name} -> {args.out} ({len(manifest.included_tables)} tables, "
        f"checksum {manifest.checksum[:12]})",
    )
    return EXIT_OK


def cmd_audit(args) -> int:
    report = privacy.audit_linkability(args.in_paths[0])
    lines = [
        f"cross-mode join paths: {report.cross_mode_paths}",
        f"cross-course join paths: {report.cross_course_paths}",
    ]
    lines += [f"warning: {w}" for w in report.warnings]
    _emit(args, report.to_dict(), "\n".join(lines))
    return EXIT_OK


def cmd_stat(args) -> int:
    registry = analytics.load_statistics(args.statistics)
    stat = registry.get(args.name)
    if stat is None:
        raise analytics.AnalyticsError(
            f"unknown statistic {args.name!r}; shipped: {', '.join(sorted(registry))}"
        )
    view = _open_view(args)
    cuts = analytics.CutSpec(
        window_start=parse_timestamp(args.window_start) if args.window_start else None,
        window_end=parse_timestamp(args.window_end) if args.window_end else None,
        cohort=analytics.CohortPredicate.parse(args.cohort) if args.cohort else None,
        country=args.country,
        by_country=args.by_country,
    )
    result = analytics.compute_statistic(view, stat, cuts)
    csv_text = result.to_csv_text()
    if args.out:
        Path(args.out).write_text(csv_text)
    _emit(args, result.to_dict(), csv_text.rstrip("\n"))
    return EXIT_OK


def cmd_correlate(args) -> int:
    view = _open_view(args)
    problem_id = analytics.resolve_problem(view, args.problem)
    result = analytics.video_homework_correlation(view, problem_id)
    if args.out:
        lines = ["course_user_id,video_seconds,correct_submissions"]
        for uid in sorted(result.pairs):
            x, y = result.pairs[uid]
            lines.append(f"{uid},{analytics.format_value(x)},{y}")
        Path(args.out).write_text("\n".join(lines) + "\n")
    if result.r is None:
        human = f"r undefined ({result.undefined_reason}); n={result.n}"
    else:
        human = f"week {result.week_index}: r={result.r:.6f} over n={result.n} users"
    _emit(args, result.to_dict(), human)
    return EXIT_OK


def cmd_export(args) -> int:
    if args.kind == "table":
        if not args.table:
            raise _UsageError("--table is required for kind=table")
        store = storeio.load_store(args.in_paths[0])
        payload = exports.export_table(store, args.table)
        exports.write_export(payload, args.out)
        rows = len(store.table(args.table))
    else:
        view = _open_view(args)
        text = exports.export_bkt(view) if args.kind == "bkt" else exports.export_irt(view)
        exports.write_export(text, args.out)
        rows = text.count("\n") - 2
    _emit(args, {"kind": args.kind, "out": str(args.out), "rows": rows},
          f"wrote {args.kind} export to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mooctk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_in=True):
        if needs_in:
            p.add_argument("--in", dest="in_paths", action="append", required=True,
                           help="input path (repeatable)")
        p.add_argument("--json", action="store_true", help="JSON summary on stdout")

    p = sub.add_parser("gen", help="generate a synthetic course corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--users", type=int, default=120)
    p.add_argument("--weeks", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--certificate-fraction", type=float, default=0.3)
    p.add_argument("--target-events", type=int, default=None)
    p.add_argument("--planted-r", type=float, default=None)
    p.add_argument("--exact-linear", action="store_true")
    p.add_argument("--verbose-log", action="store_true")
    p.add_argument("--videos-per-week", type=int, default=None)
    p.add_argument("--pages-per-week", type=int, default=None)
    common(p, needs_in=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="ingest raw logs into a course store")
    common(p)
    p.add_argument("--structure", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--adapter", choices=sorted(ingest_mod.ADAPTERS))
    p.add_argument("--roster")
    p.add_argument("--duration-cap", type=float, default=None)
    p.add_argument("--key-file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("validate", help="check every store invariant")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("partition", help="export an access-level partition")
    common(p)
    p.add_argument("--level", choices=privacy.LINKAGES, required=True)
    p.add_argument("--with-collaboration", dest="no_collaboration", action="store_false")
    p.add_argument("--no-collaboration", dest="no_collaboration", action="store_true")
    p.set_defaults(no_collaboration=False)
    p.add_argument("--ledger", action="append", default=[])
    p.add_argument("--jitter-seed", type=int, default=None,
                   help="apply order-preserving timestamp jitter (off by default)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("audit", help="report user-key linkability of a partition")
    common(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("stat", help="compute a named statistic over cuts")
    common(p)
    p.add_argument("--name", required=True)
    p.add_argument("--level", choices=privacy.LINKAGES, default=None,
                   help="simulate an access level on a full store")
    p.add_argument("--with-collaboration", dest="no_collaboration", action="store_false")
    p.add_argument("--no-collaboration", dest="no_collaboration", action="store_true")
    p.set_defaults(no_collaboration=False)
    p.add_argument("--from", dest="window_start")
    p.add_argument("--to", dest="window_end")
    p.add_argument("--cohort")
    p.add_argument("--by-country", action="store_true")
    p.add_argument("--country")
    p.add_argument("--statistics", help="statistic registry file (defaults to shipped)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stat)

    p = sub.add_parser("correlate", help="video time vs homework correctness study")
    common(p)
    p.add_argument("--problem", required=True, help="homework problem id or name")
    p.add_argument("--level", default=None, choices=privacy.LINKAGES)
    p.set_defaults(no_collaboration=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("export", help="research exports and raw table dumps")
    common(p)
    p.add_argument("--kind", choices=("bkt", "irt", "table"), required=True)
    p.add_argument("--table")
    p.add_argument("--level", default=None, choices=privacy.LINKAGES)
    p.set_defaults(no_collaboration=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (analytics.CapabilityError, privacy.PrivacyError) as exc:
        print(f"access error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (
        storeio.StoreIOError,
        ingest_mod.IngestError,
        analytics.AnalyticsError,
        KeyError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
