"""Model-card parsing: YAML front matter, carbon-emission blocks and metrics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .errors import GreenmineError

BOUNDED_METRICS = frozenset({"accuracy", "f1", "rouge1", "rougel"})

_NUMBER = r"([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)[ \t]*(%)?"
_DELIM = re.compile(r"^---[ \t]*$")
_CLOSE = re.compile(r"^(?:---|\.\.\.)[ \t]*$")
# libyaml when available; the pure-Python loader is several times slower
_LOADER = getattr(yaml, "CSafeLoader", yaml.SafeLoader)


class CardParseError(GreenmineError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CardValidationError(GreenmineError):
    """Card content that is well-formed but impossible (e.g. negative emissions)."""

    def __init__(self, message: str, value: float | None = None):
        super().__init__(message)
        self.value = value


class EmissionUnit(str, Enum):
    GRAMS = "grams"
    KILOGRAMS = "kilograms"
    UNKNOWN = "unknown"


class TrainingType(str, Enum):
    PRETRAINING = "pretraining"
    FINE_TUNING = "fine-tuning"
    PRETRAINING_FINE_TUNING = "pretraining+fine-tuning"


_UNIT_TOKENS = {
    EmissionUnit.GRAMS: {"g", "gr", "gram", "grams", "gco2", "gco2e", "gco2eq", "gco₂e"},
    EmissionUnit.KILOGRAMS: {"kg", "kgs", "kilogram", "kilograms", "kgco2", "kgco2e", "kgco2eq", "kgco₂e"},
}
_EMISSION_STRING = re.compile(
    r"^\s*([+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d*)?(?:[eE][+-]?\d+)?|[+-]?\.\d+)\s*(.*?)\s*$"
)


def parse_unit(token: str) -> EmissionUnit | None:
    """Map a unit string to a unit tag; ``None`` when unrecognized."""
    key = re.sub(r"[\s_\-]", "", token.lower())
    key = key.removesuffix("ofco2e").removesuffix("co2equivalent")
    if not key:
        return EmissionUnit.UNKNOWN
    for unit, tokens in _UNIT_TOKENS.items():
        if key in tokens:
            return unit
    return None


def parse_training_type(raw: Any) -> TrainingType | None:
    if not isinstance(raw, str):
        return None
    text = re.sub(r"[\s_\-]", "", raw.lower())
    has_pre = "pretrain" in text
    has_fine = "finetun" in text
    if has_pre and has_fine:
        return TrainingType.PRETRAINING_FINE_TUNING
    if has_pre:
        return TrainingType.PRETRAINING
    if has_fine:
        return TrainingType.FINE_TUNING
    return None


@dataclass(frozen=True)
class EmissionMetadata:
    emissions_value: float | None = None
    emissions_unit: EmissionUnit = EmissionUnit.UNKNOWN
    energy_consumption_kwh: float | None = None
    emissions_source: str | None = None
    training_type: TrainingType | None = None
    geographical_location: str | None = None
    hardware_used: str | None = None
    cloud_service: str | None = None
    training_time_s: float | None = None
    optimization_techniques: str | None = None
    energy_label: tuple[str, str] | None = None
    notes: tuple[str, ...] = field(default=(), compare=False)

    def to_front_matter(self) -> Any:
        """Inverse of :func:`parse_emissions`: a bare scalar when that is all there is."""
        fields = {
            "energy_consumption": self.energy_consumption_kwh,
            "emissions_source": self.emissions_source,
            "training_type": None if self.training_type is None else self.training_type.value,
            "geographical_location": self.geographical_location,
            "hardware_used": self.hardware_used,
            "cloud_service": self.cloud_service,
            "training_time": self.training_time_s,
            "optimization_techniques": self.optimization_techniques,
        }
        node: dict[str, Any] = {k: v for k, v in fields.items() if v is not None}
        if self.energy_label is not None:
            node["energy_label"] = [
                {"energy_label_source": self.energy_label[0], "energy_label_classification": self.energy_label[1]}
            ]
        if self.emissions_value is not None:
            if not node and self.emissions_unit is EmissionUnit.UNKNOWN:
                return self.emissions_value
            node = {"emissions": self.emissions_value, **node}
            if self.emissions_unit is not EmissionUnit.UNKNOWN:
                node["emissions_unit"] = self.emissions_unit.value
        return node


@dataclass(frozen=True)
class CardMetadata:
    emissions_block: EmissionMetadata | None = None
    declared_metrics: dict[str, float] = field(default_factory=dict)
    datasets_declared: tuple[str, ...] = ()
    tags_declared: tuple[str, ...] = ()
    extra_fields: dict[str, Any] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return (
            self.emissions_block is None
            and not self.declared_metrics
            and not self.datasets_declared
            and not self.tags_declared
            and not self.extra_fields
        )


# --------------------------------------------------------------------------
# front matter


def _front_matter_bounds(text: str) -> tuple[int, int] | None:
    """Line indexes (open, close) of the leading ``---`` block, or None."""
    lines = text.split("\n")
    if not lines or not _DELIM.match(lines[0].rstrip("\r")):
        return None
    for i in range(1, len(lines)):
        if _CLOSE.match(lines[i].rstrip("\r")):
            return 0, i
    raise CardParseError("front matter opened with '---' is never closed", line=1)


def _strip_bom(text: str) -> str:
    return text[1:] if text.startswith("\ufeff") else text


def split_front_matter_text(card_text: str) -> str | None:
    """The front-matter block verbatim (without delimiters), or None.

    Unterminated blocks yield None here; :func:`parse_front_matter` reports them.
    """
    text = _strip_bom(card_text)
    try:
        bounds = _front_matter_bounds(text)
    except CardParseError:
        return None
    if bounds is None:
        return None
    lines = text.split("\n")
    return "\n".join(lines[1 : bounds[1]])


def split_front_matter(card_text: str) -> tuple[dict[str, Any] | None, str]:
    """Parsed front-matter mapping (None when absent) and the body text."""
    text = _strip_bom(card_text or "")
    bounds = _front_matter_bounds(text)
    if bounds is None:
        return None, text
    lines = text.split("\n")
    block = "\n".join(lines[1 : bounds[1]])
    body = "\n".join(lines[bounds[1] + 1 :])
    try:
        tree = yaml.load(block, Loader=_LOADER)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = None if mark is None else mark.line + 2
        raise CardParseError(f"invalid YAML front matter: {getattr(exc, 'problem', exc)}", line) from exc
    if tree is None:
        return {}, body
    if not isinstance(tree, dict):
        raise CardParseError(f"front matter root must be a mapping, got {type(tree).__name__}", line=2)
    return tree, body


def _as_str_tuple(raw: Any) -> tuple[str, ...]:
    if raw is None:
        return ()
    if isinstance(raw, (str, int, float)):
        return (str(raw),)
    if isinstance(raw, list):
        return tuple(str(v) for v in raw if v is not None)
    return ()


def parse_front_matter(card_text: str | None, catalog: MetricCatalog | None = None) -> CardMetadata:
    tree, _ = split_front_matter(card_text or "")
    if not tree:
        return CardMetadata()
    catalog = catalog or default_catalog()
    emissions = None
    if "co2_eq_emissions" in tree:
        emissions = parse_emissions(tree["co2_eq_emissions"])
    extra = {k: v for k, v in tree.items() if k not in ("co2_eq_emissions", "datasets", "tags")}
    return CardMetadata(
        emissions_block=emissions,
        declared_metrics=_declared_metrics(tree, catalog),
        datasets_declared=_as_str_tuple(tree.get("datasets")),
        tags_declared=_as_str_tuple(tree.get("tags")),
        extra_fields=extra,
    )


def dump_card(meta: CardMetadata, body: str = "") -> str:
    """Serialize metadata back into a card with a front-matter block."""
    tree: dict[str, Any] = {}
    if meta.emissions_block is not None:
        tree["co2_eq_emissions"] = meta.emissions_block.to_front_matter()
    if meta.datasets_declared:
        tree["datasets"] = list(meta.datasets_declared)
    if meta.tags_declared:
        tree["tags"] = list(meta.tags_declared)
    tree.update(meta.extra_fields)
    if not tree:
        return body
    block = yaml.safe_dump(tree, sort_keys=False, allow_unicode=True)
    return f"---\n{block}---\n{body}"


# --------------------------------------------------------------------------
# emissions


def _number(raw: Any) -> float | None:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        return None
    value = float(raw)
    return value if math.isfinite(value) else None


def parse_emission_value(raw: Any) -> tuple[float | None, EmissionUnit, str | None]:
    """(value, unit, note) for a scalar or "number unit" string."""
    if isinstance(raw, bool):
        return None, EmissionUnit.UNKNOWN, f"boolean emissions value {raw!r}"
    if isinstance(raw, (int, float)):
        value = float(raw)
        if not math.isfinite(value):
            return None, EmissionUnit.UNKNOWN, f"non-finite emissions value {raw!r}"
        return value, EmissionUnit.UNKNOWN, None
    if isinstance(raw, str):
        match = _EMISSION_STRING.match(raw)
        if match is None:
            return None, EmissionUnit.UNKNOWN, f"unparseable emissions string {raw!r}"
        unit = parse_unit(match.group(2))
        if unit is None:
            return None, EmissionUnit.UNKNOWN, f"unrecognized emissions unit in {raw!r}"
        return float(match.group(1).replace(",", "")), unit, None
    return None, EmissionUnit.UNKNOWN, f"unsupported emissions value of type {type(raw).__name__}"


def _check_non_negative(value: float | None) -> None:
    if value is not None and value < 0:
        raise CardValidationError(f"negative emissions value {value}", value)


def _energy_label(raw: Any) -> tuple[str, str] | None:
    items = raw if isinstance(raw, list) else [raw]
    for item in items:
        if isinstance(item, dict):
            source = item.get("energy_label_source")
            label = item.get("energy_label_classification")
            if source is not None or label is not None:
                return (str(source or ""), str(label or ""))
    return None


_KNOWN_EMISSION_KEYS = {
    "emissions", "emissions_unit", "unit", "energy_consumption", "emissions_source", "source",
    "training_type", "geographical_location", "hardware_used", "cloud_service", "training_time",
    "optimization_techniques", "energy_label",
}


def parse_emissions(raw: Any) -> EmissionMetadata:
    """Interpret a ``co2_eq_emissions`` node (scalar, "value unit" string or mapping)."""
    if not isinstance(raw, dict):
        value, unit, note = parse_emission_value(raw)
        _check_non_negative(value)
        return EmissionMetadata(value, unit, notes=(note,) if note else ())

    notes: list[str] = []
    value, unit, note = (None, EmissionUnit.UNKNOWN, None)
    if "emissions" in raw:
        value, unit, note = parse_emission_value(raw["emissions"])
        if note:
            notes.append(note)
    else:
        notes.append("emissions key missing")
    _check_non_negative(value)
    declared_unit = raw.get("emissions_unit", raw.get("unit"))
    if declared_unit is not None:
        parsed = parse_unit(str(declared_unit))
        if parsed is None:
            notes.append(f"unrecognized emissions_unit {declared_unit!r}")
        elif unit is EmissionUnit.UNKNOWN:
            unit = parsed

    training_type = parse_training_type(raw.get("training_type"))
    if raw.get("training_type") is not None and training_type is None:
        notes.append(f"unrecognized training_type {raw.get('training_type')!r}")
    unknown = sorted(str(k) for k in raw if k not in _KNOWN_EMISSION_KEYS)
    if unknown:
        notes.append(f"unknown emission keys: {', '.join(unknown)}")

    def text(key: str) -> str | None:
        v = raw.get(key)
        return None if v is None else str(v)

    source = raw.get("emissions_source", raw.get("source"))
    return EmissionMetadata(
        emissions_value=value,
        emissions_unit=unit,
        energy_consumption_kwh=_number(raw.get("energy_consumption")),
        emissions_source=None if source is None else str(source),
        training_type=training_type,
        geographical_location=text("geographical_location"),
        hardware_used=text("hardware_used"),
        cloud_service=text("cloud_service"),
        training_time_s=_number(raw.get("training_time")),
        optimization_techniques=text("optimization_techniques"),
        energy_label=_energy_label(raw.get("energy_label")),
        notes=tuple(notes),
    )


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricCatalog:
    version: str
    patterns: tuple[tuple[str, re.Pattern[str]], ...]

    @property
    def names(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for name, _ in self.patterns:
            seen.setdefault(name, None)
        return tuple(seen)

    @classmethod
    def from_text(cls, text: str, source: str = "<catalog>") -> MetricCatalog:
        version = "unversioned"
        patterns = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            if line.startswith("#"):
                m = re.match(r"#\s*version:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            if not line.strip():
                continue
            name, sep, pattern = line.partition("\t")
            if not sep or not name.strip() or not pattern.strip():
                raise ValueError(f"{source}:{line_no}: expected name<TAB>pattern")
            if pattern.count("{number}") != 1:
                raise ValueError(f"{source}:{line_no}: pattern must contain {{number}} exactly once")
            try:
                compiled = re.compile(pattern.replace("{number}", _NUMBER), re.IGNORECASE)
            except re.error as exc:
                raise ValueError(f"{source}:{line_no}: {exc}") from exc
            patterns.append((name.strip().lower(), compiled))
        return cls(version, tuple(patterns))

    @classmethod
    def load(cls, path: Path | str) -> MetricCatalog:
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))


@lru_cache(maxsize=1)
def default_catalog() -> MetricCatalog:
    text = resources.files("greenmine.data").joinpath("metric_patterns.tsv").read_text(encoding="utf-8")
    return MetricCatalog.from_text(text, "metric_patterns.tsv")


def normalize_metric(name: str, value: float | str, percent: bool = False) -> float | None:
    """Rescale percentages and reject out-of-range values for bounded metrics.

    Rescaling is done in decimal so ``92.6`` becomes exactly ``0.926``.
    """
    exact = Decimal(value if isinstance(value, str) else repr(float(value)))
    if not exact.is_finite():
        return None
    if name not in BOUNDED_METRICS:
        return float(exact)
    if percent or 1 < exact <= 100:
        exact = exact / 100
    if 0 <= exact <= 1:
        return float(exact)
    return None


def _canonical_name(raw_name: Any, catalog: MetricCatalog) -> str | None:
    if not isinstance(raw_name, str):
        return None
    lowered = raw_name.lower()
    for name in catalog.names:
        if re.search(rf"(?<![a-z0-9]){re.escape(name)}(?![a-z0-9])", lowered):
            return name
    return None


def _declared_metrics(tree: dict[str, Any], catalog: MetricCatalog) -> dict[str, float]:
    found: dict[str, float] = {}

    def offer(raw_name: Any, raw_value: Any) -> None:
        name = _canonical_name(raw_name, catalog)
        value = _number(raw_value)
        if name is None or value is None or name in found:
            return
        normalized = normalize_metric(name, value)
        if normalized is not None:
            found[name] = normalized

    index = tree.get("model-index")
    if isinstance(index, list):
        for model in index:
            results = model.get("results") if isinstance(model, dict) else None
            for result in results if isinstance(results, list) else []:
                metrics = result.get("metrics") if isinstance(result, dict) else None
                for metric in metrics if isinstance(metrics, list) else []:
                    if isinstance(metric, dict):
                        offer(metric.get("type") or metric.get("name"), metric.get("value"))
    info = tree.get("model_info")
    if isinstance(info, dict) and isinstance(info.get("performance_metrics"), list):
        for metric in info["performance_metrics"]:
            if isinstance(metric, dict):
                offer(metric.get("metric"), metric.get("value"))
    return found


def _scan(text: str, catalog: MetricCatalog, found: dict[str, float]) -> None:
    earliest: dict[str, tuple[int, float]] = {}
    for name, pattern in catalog.patterns:
        if name in found:
            continue
        for match in pattern.finditer(text):
            value = normalize_metric(name, match.group(1), percent=bool(match.group(2)))
            if value is not None:
                if name not in earliest or match.start() < earliest[name][0]:
                    earliest[name] = (match.start(), value)
                break
    for name, (_, value) in earliest.items():
        found[name] = value


def extract_metrics(card_text: str | None, catalog: MetricCatalog | None = None) -> dict[str, float]:
    """Performance metrics found in a card.

    Precedence: structured front-matter declarations, then pattern matches in
    the front-matter text, then the first match in the body. Cards whose
    front matter fails to parse are scanned as plain text.
    """
    catalog = catalog or default_catalog()
    text = _strip_bom(card_text or "")
    found: dict[str, float] = {}
    try:
        tree, body = split_front_matter(text)
        block = split_front_matter_text(text) or ""
    except CardParseError:
        tree, body, block = None, text, ""
    if tree:
        found.update(_declared_metrics(tree, catalog))
    _scan(block, catalog, found)
    _scan(body, catalog, found)
    return {name: found[name] for name in sorted(found)}
