"""Command-line entry point: ``greenmine <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__, serialize
from .classify import CSV_COLUMNS, classify_corpus, csv_row
from .config import PipelineConfig
from .errors import GreenmineError
from .lint import RuleCatalog, default_catalog, exit_code, format_json, format_text, lint_card_text
from .pipeline import analyse, harmonize_snapshot, read_harmonized, write_harmonized
from .registry import (
    RegistryClient,
    RetryPolicy,
    filter_snapshot,
    format_timestamp,
    parse_timestamp,
    read_snapshot,
    write_snapshot,
)
from .report import emit_report

logger = logging.getLogger("greenmine")

FORMATS = ("json", "csv", "text")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fetch(args: argparse.Namespace, config: PipelineConfig) -> int:
    client = RegistryClient(
        api_base=args.api_base or config.api_base,
        page_size=config.page_size,
        max_workers=args.workers or config.max_workers,
        retry=RetryPolicy(attempts=config.retry_attempts),
    )
    entries = client.list_models(args.filter, args.page_limit)
    logger.info("listed %d models", len(entries))
    if not args.no_cards:
        entries = client.attach_cards(entries)
    target = _out_dir(args) / "snapshot.jsonl"
    header = write_snapshot(entries, target, source=client.api_base)
    print(f"wrote {header.record_count} records to {target}")
    return 0


def cmd_snapshot(args: argparse.Namespace, config: PipelineConfig) -> int:
    header, entries = read_snapshot(args.snapshot)
    with_cards = sum(1 for e in entries if e.card_text is not None)
    if args.until:
        kept = filter_snapshot(entries, parse_timestamp(args.until), args.cutoff_field)
        target = _out_dir(args) / "snapshot.jsonl"
        if target.resolve() == Path(args.snapshot).resolve():
            raise GreenmineError("refusing to overwrite the input snapshot; choose another --out")
        write_snapshot(kept, target, source=header.source, fetched_at=header.fetched_at)
        print(f"kept {len(kept)} of {len(entries)} records with {args.cutoff_field} <= {args.until}; wrote {target}")
        return 0
    info = {
        "fetched_at": format_timestamp(header.fetched_at),
        "source": header.source,
        "record_count": header.record_count,
        "with_cards": with_cards,
        "tool_version": header.tool_version,
    }
    if args.format == "json":
        sys.stdout.write(serialize.dumps(info))
    else:
        for key, value in info.items():
            print(f"{key}: {value}")
    return 0


def cmd_harmonize(args: argparse.Namespace, config: PipelineConfig) -> int:
    if args.overrides:
        config = PipelineConfig(**{**config.__dict__, "overrides": Path(args.overrides)})
    if args.tag_threshold is not None:
        config = PipelineConfig(**{**config.__dict__, "tag_threshold": args.tag_threshold})
    stage = harmonize_snapshot(args.snapshot, config)
    written = write_harmonized(stage, _out_dir(args), csv_table=args.format == "csv")
    print(f"{len(stage.corpus.records)} records, {len(stage.corpus.dropped)} dropped; wrote {written[0]}")
    return 0


def cmd_classify(args: argparse.Namespace, config: PipelineConfig) -> int:
    records, _ = read_harmonized(args.table)
    output = classify_corpus(records, config.efficiency)
    out = _out_dir(args)
    if args.format == "csv":
        target = out / "classification.csv"
        with target.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in output.rows:
                values = csv_row(row)
                writer.writerow([serialize.csv_cell(values[c]) for c in CSV_COLUMNS])
    else:
        target = out / "classification.jsonl"
        with target.open("w", encoding="utf-8", newline="\n") as fh:
            for row in output.rows:
                fh.write(serialize.dumps(row.to_dict(), indent=0).replace("\n", "") + "\n")
    if output.skipped_reason:
        print(f"efficiency labels skipped: {output.skipped_reason}", file=sys.stderr)
    print(f"classified {len(output.rows)} records; wrote {target}")
    return 0


def cmd_stats(args: argparse.Namespace, config: PipelineConfig) -> int:
    records, meta = read_harmonized(args.table)
    report = analyse(records, meta, config, exclude_months=_months(args, config))
    results = [e.to_dict() for e in report.stat_results]
    if args.format == "text":
        from .report import summary_text

        sys.stdout.write(summary_text(report))
        return 0
    target = _out_dir(args) / "stats.json"
    target.write_text(serialize.dumps(results), encoding="utf-8")
    print(f"{sum(1 for e in report.stat_results if e.executed)} tests executed; wrote {target}")
    return 0


def cmd_report(args: argparse.Namespace, config: PipelineConfig) -> int:
    records, meta = read_harmonized(args.table)
    if args.snapshot_ref:
        meta = {**meta, "snapshot_ref": args.snapshot_ref}
    report = analyse(records, meta, config, exclude_months=_months(args, config))
    manifest = emit_report(report, _out_dir(args))
    for entry in manifest:
        print(f"{entry.sha256}  {entry.path}")
    return 0


def cmd_lint(args: argparse.Namespace, config: PipelineConfig) -> int:
    catalog = default_catalog()
    if args.rules:
        catalog = catalog.extended(RuleCatalog.load(args.rules))
    worst = 0
    collected = []
    for name in args.cards:
        try:
            text = Path(name).read_text(encoding="utf-8")
        except OSError as exc:
            raise GreenmineError(f"{name}: {exc}") from exc
        diagnostics = lint_card_text(text, catalog)
        worst = max(worst, exit_code(diagnostics))
        collected.append((name, diagnostics))
    if args.format == "json":
        if len(collected) == 1:
            sys.stdout.write(format_json(collected[0][1]) + "\n")
        else:
            merged = {name: [d.to_dict() for d in diags] for name, diags in collected}
            sys.stdout.write(serialize.dumps(merged))
    else:
        for name, diagnostics in collected:
            if diagnostics:
                print(format_text(name, diagnostics))
            else:
                print(f"{name}: ok")
    return worst


def _months(args: argparse.Namespace, config: PipelineConfig) -> tuple[str, ...]:
    if args.exclude_months is None:
        return config.exclude_months
    return tuple(m for item in args.exclude_months for m in item.split(",") if m)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenmine", description="Mine and analyse carbon-emission reporting of hub models."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML pipeline configuration")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--format", choices=FORMATS, default=None, help="output format")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="list models (and cards) from the registry into a snapshot")
    p.add_argument("--api-base")
    p.add_argument("--filter", action="append", default=[], help="tag filter (repeatable)")
    p.add_argument("--page-limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-cards", action="store_true", help="skip card downloads")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("snapshot", help="inspect a snapshot or cut it at a date")
    p.add_argument("snapshot")
    p.add_argument("--until", help="keep entries at or before this ISO timestamp")
    p.add_argument("--cutoff-field", choices=("created_at", "last_modified"), default="created_at")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("harmonize", help="build the harmonized table from a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--overrides", help="curation CSV with model_id,field,value")
    p.add_argument("--tag-threshold", type=int)
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("classify", help="reporting tiers and efficiency labels")
    p.add_argument("table")
    p.set_defaults(func=cmd_classify)

    for name, func, text in (("stats", cmd_stats, "run the statistical tests"),
                             ("report", cmd_report, "write every report artifact")):
        p = sub.add_parser(name, help=text)
        p.add_argument("table")
        p.add_argument("--exclude-months", action="append", help="YYYY-MM months left out of the median series")
        if name == "report":
            p.add_argument("--snapshot-ref", help="override the snapshot reference recorded in the report")
        p.set_defaults(func=func)

    p = sub.add_parser("lint", help="check card metadata against the extended schema")
    p.add_argument("cards", nargs="+")
    p.add_argument("--rules", help="extra rule catalog (YAML) merged over the shipped one")
    p.set_defaults(func=cmd_lint)
    return parser


_DEFAULT_FORMAT = {"lint": "text", "snapshot": "text", "stats": "json", "classify": "json"}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.format is None:
        args.format = _DEFAULT_FORMAT.get(args.command, "json")
    try:
        config = PipelineConfig.load(args.config)
        return args.func(args, config)
    except GreenmineError as exc:
        print(f"greenmine: error: {exc}", file=sys.stderr)
        # lint reserves 1 and 2 for findings
        return 3 if args.command == "lint" else 1


if __name__ == "__main__":
    sys.exit(main())
