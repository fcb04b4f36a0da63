"""File-to-file stage wiring used by the CLI."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import serialize
from .classify import ClassificationOutput, classify_corpus
from .config import PipelineConfig
from .errors import GreenmineError
from .harmonize import (
    HarmonizedCorpus,
    ModelRecord,
    harmonize,
    load_overrides,
    read_table_jsonl,
    write_table_csv,
    write_table_jsonl,
)
from .registry import SnapshotHeader, format_timestamp, read_snapshot
from .report import AnalysisReport, ManifestEntry, emit_report, run_analysis

TABLE_NAME = "table.jsonl"
META_NAME = "table.meta.json"


def file_digest(path: Path | str) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def snapshot_ref(path: Path | str) -> str:
    """File name plus content hash; independent of the directory it sits in."""
    return f"{Path(path).name}@sha256:{file_digest(path)}"


def generated_at(fetched_at: str | None) -> str:
    """Report timestamp: SOURCE_DATE_EPOCH when set, else the snapshot's fetch time."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return format_timestamp(datetime.fromtimestamp(int(epoch), tz=timezone.utc))
    return fetched_at or "unknown"


@dataclass
class HarmonizedStage:
    corpus: HarmonizedCorpus
    header: SnapshotHeader
    snapshot_ref: str

    def meta(self) -> dict[str, Any]:
        return {
            "snapshot_ref": self.snapshot_ref,
            "fetched_at": format_timestamp(self.header.fetched_at),
            "source": self.header.source,
            "records": len(self.corpus.records),
            "dropped": len(self.corpus.dropped),
        }


def harmonize_snapshot(path: Path | str, config: PipelineConfig | None = None) -> HarmonizedStage:
    config = config or PipelineConfig()
    header, entries = read_snapshot(path)
    overrides = load_overrides(config.overrides) if config.overrides else None
    corpus = harmonize(entries, overrides=overrides, tag_threshold=config.tag_threshold)
    return HarmonizedStage(corpus, header, snapshot_ref(path))


def write_harmonized(stage: HarmonizedStage, out_dir: Path | str, *, csv_table: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / TABLE_NAME, out_dir / META_NAME, out_dir / "dropped.jsonl", out_dir / "tags.csv"]
    write_table_jsonl(stage.corpus.records, written[0])
    written[1].write_text(serialize.dumps(stage.meta()), encoding="utf-8")
    with written[2].open("w", encoding="utf-8", newline="\n") as fh:
        for d in stage.corpus.dropped:
            fh.write(json.dumps(d.to_dict()) + "\n")
    with written[3].open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tag", "model_count", "kept", "drop_reason"])
        for s in stage.corpus.tag_stats:
            reason = s.drop_reason.value if s.drop_reason else ""
            writer.writerow([s.tag, s.model_count, "true" if s.kept else "false", reason])
    if csv_table:
        written.append(out_dir / "table.csv")
        write_table_csv(stage.corpus.records, written[-1])
    return written


def read_harmonized(table: Path | str) -> tuple[list[ModelRecord], dict[str, Any]]:
    """Records of a harmonized table plus its sidecar metadata (empty when absent)."""
    table = Path(table)
    if not table.exists():
        raise GreenmineError(f"{table}: no such table")
    meta_path = table.with_name(META_NAME)
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return read_table_jsonl(table), meta


def analyse(
    records: list[ModelRecord],
    meta: dict[str, Any],
    config: PipelineConfig,
    *,
    classification: ClassificationOutput | None = None,
    exclude_months: tuple[str, ...] | None = None,
) -> AnalysisReport:
    return run_analysis(
        records,
        config.stats,
        config.efficiency,
        generated_at=generated_at(meta.get("fetched_at")),
        snapshot_ref=meta.get("snapshot_ref", "unknown"),
        exclude_months=config.exclude_months if exclude_months is None else exclude_months,
        classification=classification,
    )


def run_pipeline(snapshot: Path | str, out_dir: Path | str, config: PipelineConfig | None = None) -> list[ManifestEntry]:
    """Snapshot in, report directory out, with no network access."""
    config = config or PipelineConfig()
    stage = harmonize_snapshot(snapshot, config)
    records = stage.corpus.records
    classification = classify_corpus(records, config.efficiency)
    report = analyse(records, stage.meta(), config, classification=classification)
    return emit_report(report, out_dir)
