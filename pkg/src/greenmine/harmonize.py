"""Build the harmonized analysis table from registry entries and parsed cards."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any

from .cards import (
    CardMetadata,
    CardParseError,
    CardValidationError,
    EmissionUnit,
    TrainingType,
    extract_metrics,
    parse_front_matter,
    parse_training_type,
)
from .errors import GreenmineError
from .registry import RawModelEntry, format_timestamp, parse_timestamp
from .serialize import csv_cell

logger = logging.getLogger(__name__)

DEFAULT_TAG_THRESHOLD = 100


class HarmonizeError(GreenmineError):
    pass


class Domain(str, Enum):
    NLP = "NLP"
    COMPUTER_VISION = "ComputerVision"
    MULTIMODAL = "Multimodal"
    AUDIO = "Audio"
    REINFORCEMENT_LEARNING = "ReinforcementLearning"
    NO_TAG = "NoTag"
    OTHER = "Other"


DOMAIN_PRIORITY = (
    Domain.MULTIMODAL,
    Domain.REINFORCEMENT_LEARNING,
    Domain.AUDIO,
    Domain.COMPUTER_VISION,
    Domain.NLP,
)


class DropReason(str, Enum):
    LANGUAGE = "language"
    AUXILIARY = "auxiliary"
    BELOW_THRESHOLD = "below_threshold"


# --------------------------------------------------------------------------
# config files


def _data_lines(text: str) -> list[str]:
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def _read_data(name: str, path: Path | str | None) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return resources.files("greenmine.data").joinpath(name).read_text(encoding="utf-8")


def load_domain_table(path: Path | str | None = None) -> dict[str, Domain]:
    table: dict[str, Domain] = {}
    for line in _data_lines(_read_data("domain_map.tsv", path)):
        tag, sep, domain = line.partition("\t")
        if not sep:
            raise HarmonizeError(f"domain table line {line!r}: expected tag<TAB>domain")
        try:
            table[tag.strip()] = Domain(domain.strip())
        except ValueError as exc:
            raise HarmonizeError(f"unknown domain {domain.strip()!r} for tag {tag!r}") from exc
    return table


def load_tag_list(name: str, path: Path | str | None = None) -> frozenset[str]:
    return frozenset(_data_lines(_read_data(name, path)))


def language_tags(path: Path | str | None = None) -> frozenset[str]:
    return load_tag_list("language_tags.txt", path)


def auxiliary_tags(path: Path | str | None = None) -> frozenset[str]:
    return load_tag_list("auxiliary_tags.txt", path)


# --------------------------------------------------------------------------
# per-value transforms


def harmonize_co2(value: float, unit: EmissionUnit | str) -> float:
    """Emissions in grams CO2e. Unknown units are taken as grams."""
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValueError(f"emissions must be a finite number, got {value!r}")
    if value < 0:
        raise ValueError(f"emissions must be >= 0, got {value}")
    unit = EmissionUnit(unit)
    if unit is EmissionUnit.KILOGRAMS:
        return value * 1000.0
    return float(value)


def map_domain(tags: Sequence[str], mapping_table: Mapping[str, Domain] | None = None) -> Domain:
    if not tags:
        return Domain.NO_TAG
    table = load_domain_table() if mapping_table is None else mapping_table
    hits = {table[t] for t in tags if t in table}
    for domain in DOMAIN_PRIORITY:
        if domain in hits:
            return domain
    return Domain.OTHER


@dataclass(frozen=True)
class TagStats:
    tag: str
    model_count: int
    kept: bool
    drop_reason: DropReason | None = None


def _is_auxiliary(tag: str, auxiliary: frozenset[str]) -> bool:
    head = tag.split(":", 1)[0]
    return tag in auxiliary or (":" in tag and head in auxiliary)


def filter_tags(
    tag_counts: Mapping[str, int],
    threshold: int = DEFAULT_TAG_THRESHOLD,
    *,
    language: frozenset[str] | None = None,
    auxiliary: frozenset[str] | None = None,
) -> list[TagStats]:
    """Classify each tag as kept or dropped (language, auxiliary, rare), sorted by tag."""
    language = language_tags() if language is None else language
    auxiliary = auxiliary_tags() if auxiliary is None else auxiliary
    out = []
    for tag in sorted(tag_counts):
        count = tag_counts[tag]
        if count < 0:
            raise ValueError(f"negative count for tag {tag!r}")
        if tag.lower() in language:
            reason = DropReason.LANGUAGE
        elif _is_auxiliary(tag.lower(), auxiliary):
            reason = DropReason.AUXILIARY
        elif count < threshold:
            reason = DropReason.BELOW_THRESHOLD
        else:
            reason = None
        out.append(TagStats(tag, count, reason is None, reason))
    return out


def count_tags(entries: Iterable[RawModelEntry]) -> Counter[str]:
    counts: Counter[str] = Counter()
    for entry in entries:
        counts.update(set(entry.tags))
    return counts


_SIZE_UNITS = {"": 1, "b": 1, "kb": 1e3, "mb": 1e6, "gb": 1e9, "tb": 1e12,
               "kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40}


def parse_size(raw: Any) -> float | None:
    """Bytes from a number or a string like ``"3.2 GB"``; None when unusable."""
    if isinstance(raw, bool) or raw is None:
        return None
    if isinstance(raw, (int, float)):
        return float(raw) if math.isfinite(raw) and raw > 0 else None
    if isinstance(raw, str):
        m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][+-]?\d+)?)\s*([a-zA-Z]*)\s*", raw.replace(",", ""))
        if m and m.group(2).lower() in _SIZE_UNITS:
            value = float(m.group(1)) * _SIZE_UNITS[m.group(2).lower()]
            return value if value > 0 else None
    return None


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ModelRecord:
    model_id: str
    co2_grams: float | None = None
    co2_reported: bool = False
    auto_trained: bool = False
    domain: Domain = Domain.NO_TAG
    model_size_bytes: float | None = None
    dataset_size_bytes: float | None = None
    training_type: TrainingType | None = None
    geographical_location: str | None = None
    hardware_used: str | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    downloads: int = 0
    created_at: datetime | None = None
    year_month: str | None = None
    library_name: str | None = None
    kept_tags: tuple[str, ...] = ()
    has_energy_label: bool = False
    provenance: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, datetime):
                value = format_timestamp(value)
            elif isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, dict):
                value = dict(sorted(value.items()))
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelRecord:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise HarmonizeError(f"unknown ModelRecord fields {sorted(unknown)}")
        kwargs = dict(data)
        kwargs["domain"] = Domain(kwargs.get("domain", Domain.NO_TAG.value))
        if kwargs.get("training_type") is not None:
            kwargs["training_type"] = TrainingType(kwargs["training_type"])
        if kwargs.get("created_at") is not None:
            kwargs["created_at"] = parse_timestamp(kwargs["created_at"])
        kwargs["kept_tags"] = tuple(kwargs.get("kept_tags") or ())
        kwargs["metrics"] = dict(kwargs.get("metrics") or {})
        kwargs["provenance"] = dict(kwargs.get("provenance") or {})
        return cls(**kwargs)


RECORD_FIELDS = tuple(f.name for f in fields(ModelRecord))
CONTEXT_FIELDS = ("hardware_used", "geographical_location", "dataset_size_bytes", "training_type")


def validate_record(record: ModelRecord) -> list[str]:
    """Invariant violations for one harmonized record (empty list when valid)."""
    problems = []
    if record.co2_reported != (record.co2_grams is not None):
        problems.append("co2_reported disagrees with co2_grams presence")
    if record.co2_grams is not None and not (math.isfinite(record.co2_grams) and record.co2_grams > 0):
        problems.append(f"co2_grams must be > 0, got {record.co2_grams}")
    if record.year_month is not None:
        if not re.fullmatch(r"\d{4}-\d{2}", record.year_month):
            problems.append(f"bad year_month {record.year_month!r}")
        elif record.created_at is not None and record.created_at.strftime("%Y-%m") != record.year_month:
            problems.append("year_month does not match created_at")
    for name, value in record.metrics.items():
        if not 0.0 <= value <= 1.0:
            problems.append(f"metric {name}={value} outside [0, 1]")
    if record.downloads < 0:
        problems.append("negative downloads")
    return problems


def is_autotrained(tags: Iterable[str], card: CardMetadata) -> bool:
    if any(t.lower() == "autotrain" for t in tags):
        return True
    if any(t.lower() == "autotrain" for t in card.tags_declared):
        return True
    source = card.emissions_block.emissions_source if card.emissions_block else None
    return bool(source and "autotrain" in source.lower())


_FLOAT_FIELDS = {"co2_grams", "model_size_bytes", "dataset_size_bytes"}
_STR_FIELDS = {"geographical_location", "hardware_used", "library_name"}
_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce_override(name: str, value: str) -> Any:
    value = value.strip()
    if value == "":
        return None
    if name in _FLOAT_FIELDS:
        return float(value)
    if name in _STR_FIELDS:
        return value
    if name == "downloads":
        return int(value)
    if name == "auto_trained":
        return _BOOL_WORDS[value.lower()]
    if name == "training_type":
        parsed = parse_training_type(value)
        if parsed is None:
            raise ValueError(f"unrecognized training_type {value!r}")
        return parsed
    if name == "domain":
        return Domain(value)
    if name == "created_at":
        return parse_timestamp(value)
    if name == "kept_tags":
        return tuple(t for t in value.split(";") if t)
    if name.startswith("metrics."):
        return float(value)
    raise ValueError(f"field {name!r} cannot be overridden")


def load_overrides(path: Path | str) -> dict[str, dict[str, str]]:
    """Curation CSV (``model_id,field,value``) grouped by model_id."""
    path = Path(path)
    out: dict[str, dict[str, str]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["model_id", "field", "value"]:
            raise HarmonizeError(f"{path}: header must be exactly model_id,field,value")
        for line_no, row in enumerate(reader, start=2):
            name = row["field"].strip()
            try:
                _coerce_override(name, row["value"])
            except (ValueError, KeyError) as exc:
                raise HarmonizeError(f"{path}:{line_no}: {exc}") from exc
            out.setdefault(row["model_id"].strip(), {})[name] = row["value"]
    return out


def build_record(
    raw: RawModelEntry,
    card: CardMetadata | None = None,
    overrides: Mapping[str, str] | None = None,
    *,
    kept_tags: Iterable[str] | None = None,
    domain_table: Mapping[str, Domain] | None = None,
) -> ModelRecord:
    """Merge registry fields, card metadata and manual overrides into one row.

    A card with a negative emissions value still yields a record carrying
    that value so the suspicious-record filter can log it.
    """
    if not raw.model_id:
        raise HarmonizeError("raw entry without model_id")
    corrupt_value = None
    if card is None:
        try:
            card = parse_front_matter(raw.card_text)
        except CardValidationError as exc:
            logger.warning("%s: %s", raw.model_id, exc)
            card, corrupt_value = CardMetadata(), exc.value
        except CardParseError as exc:
            logger.warning("%s: unreadable card front matter (%s)", raw.model_id, exc)
            card = CardMetadata()

    em = card.emissions_block
    co2 = corrupt_value
    if em is not None and em.emissions_value is not None:
        co2 = harmonize_co2(em.emissions_value, em.emissions_unit)

    info = card.extra_fields.get("model_info")
    info = info if isinstance(info, dict) else {}
    metrics = extract_metrics(raw.card_text) if raw.card_text else dict(card.declared_metrics)

    kept = set(raw.tags) if kept_tags is None else set(kept_tags)
    values: dict[str, Any] = {
        "model_id": raw.model_id,
        "co2_grams": co2,
        "auto_trained": is_autotrained(raw.tags, card),
        "domain": map_domain(raw.tags, domain_table),
        "model_size_bytes": parse_size(info.get("model_file_size")),
        "dataset_size_bytes": parse_size(info.get("datasets_size")),
        "training_type": em.training_type if em else None,
        "geographical_location": em.geographical_location if em else None,
        "hardware_used": em.hardware_used if em else None,
        "metrics": metrics,
        "downloads": raw.downloads,
        "created_at": raw.created_at,
        "library_name": raw.library_name,
        "kept_tags": tuple(sorted(t for t in set(raw.tags) if t in kept)),
        "has_energy_label": bool(em and em.energy_label and all(s.strip() for s in em.energy_label)),
    }

    provenance: dict[str, str] = {}
    for name, text in sorted((overrides or {}).items()):
        value = _coerce_override(name, text)
        if name.startswith("metrics."):
            metric = name.split(".", 1)[1]
            metrics = dict(values["metrics"])
            if value is None:
                metrics.pop(metric, None)
            else:
                metrics[metric] = value
            values["metrics"] = metrics
        else:
            values[name] = value
        provenance[name] = "manual"

    created = values["created_at"]
    if created is None:
        logger.warning("%s: no usable creation timestamp; year_month left empty", raw.model_id)
    values["year_month"] = None if created is None else created.strftime("%Y-%m")
    values["co2_reported"] = values["co2_grams"] is not None
    values["provenance"] = provenance
    return ModelRecord(**values)


@dataclass(frozen=True)
class DroppedRecord:
    model_id: str
    reason: str
    co2_grams: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"model_id": self.model_id, "reason": self.reason, "co2_grams": self.co2_grams}


def filter_suspicious(records: Iterable[ModelRecord]) -> tuple[list[ModelRecord], list[DroppedRecord]]:
    """Split off emission reporters whose value is zero, negative or non-finite."""
    kept, dropped = [], []
    for record in records:
        co2 = record.co2_grams
        if not record.co2_reported or co2 is None:
            kept.append(record)
        elif not math.isfinite(co2):
            dropped.append(DroppedRecord(record.model_id, "non_finite_emissions", co2))
        elif co2 == 0:
            dropped.append(DroppedRecord(record.model_id, "zero_emissions", co2))
        elif co2 < 0:
            dropped.append(DroppedRecord(record.model_id, "negative_emissions", co2))
        else:
            kept.append(record)
    return kept, dropped


@dataclass
class HarmonizedCorpus:
    records: list[ModelRecord]
    dropped: list[DroppedRecord]
    tag_stats: list[TagStats]


def harmonize(
    entries: Iterable[RawModelEntry],
    *,
    overrides: Mapping[str, Mapping[str, str]] | None = None,
    domain_table: Mapping[str, Domain] | None = None,
    tag_threshold: int = DEFAULT_TAG_THRESHOLD,
) -> HarmonizedCorpus:
    entries = sorted(entries, key=lambda e: e.model_id)
    domain_table = load_domain_table() if domain_table is None else domain_table
    stats = filter_tags(count_tags(entries), tag_threshold)
    kept_tags = {s.tag for s in stats if s.kept}
    overrides = overrides or {}
    unknown = set(overrides) - {e.model_id for e in entries}
    for model_id in sorted(unknown):
        logger.warning("override for unknown model %s ignored", model_id)
    records = [
        build_record(e, overrides=overrides.get(e.model_id), kept_tags=kept_tags, domain_table=domain_table)
        for e in entries
    ]
    kept, dropped = filter_suspicious(records)
    return HarmonizedCorpus(kept, dropped, stats)


def one_hot_tags(records: Sequence[ModelRecord]) -> tuple[list[str], list[list[int]]]:
    """Column names and a 0/1 matrix over each record's kept tags."""
    columns = sorted({t for r in records for t in r.kept_tags})
    index = {t: i for i, t in enumerate(columns)}
    matrix = []
    for r in records:
        row = [0] * len(columns)
        for t in r.kept_tags:
            row[index[t]] = 1
        matrix.append(row)
    return columns, matrix


# --------------------------------------------------------------------------
# table I/O


def write_table_jsonl(records: Iterable[ModelRecord], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in sorted(records, key=lambda r: r.model_id):
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=False) + "\n")


def read_table_jsonl(path: Path | str) -> list[ModelRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(ModelRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise HarmonizeError(f"{path}:{line_no}: {exc}") from exc
    return out


def _csv_cell(value: Any) -> str:
    if isinstance(value, list):
        return ";".join(value)
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    return csv_cell(value)


def write_table_csv(records: Iterable[ModelRecord], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in sorted(records, key=lambda r: r.model_id):
            d = r.to_dict()
            writer.writerow([_csv_cell(d[name]) for name in RECORD_FIELDS])


def with_overrides(record: ModelRecord, **changes: Any) -> ModelRecord:
    """Copy of ``record`` with fields replaced and derived flags kept consistent."""
    updated = replace(record, **changes)
    year_month = None if updated.created_at is None else updated.created_at.strftime("%Y-%m")
    return replace(updated, co2_reported=updated.co2_grams is not None, year_month=year_month)
