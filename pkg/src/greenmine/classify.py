"""Reporting-practice tiers and A-E carbon-efficiency labels."""

from __future__ import annotations

import math
import statistics
from bisect import bisect_right
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from .errors import GreenmineError
from .harmonize import CONTEXT_FIELDS, ModelRecord

EPSILON = 1e-6
LABELS = "ABCDE"
ATTRIBUTES = ("co2", "size_efficiency", "dataset_efficiency", "downloads", "performance")
MINIMIZE = frozenset({"co2"})
DEFAULT_WEIGHTS = {
    "co2": 0.35,
    "size_efficiency": 0.1,
    "dataset_efficiency": 0.1,
    "downloads": 0.25,
    "performance": 0.2,
}
DEFAULT_THRESHOLDS = (1.6, 2.2, 2.8, 3.4)
DEFAULT_REFERENCE_MODEL = "distilgpt2"


class ClassificationError(GreenmineError):
    pass


# --------------------------------------------------------------------------
# reporting tiers


class Tier(str, Enum):
    UNKNOWN_EMISSIONS = "UnknownEmissions"
    CONTEXT_REPORTING = "ContextReporting"
    BASIC_EMISSION_REPORTING = "BasicEmissionReporting"
    ENERGY_AWARENESS = "EnergyAwareness"
    CERTIFIED_ENERGY_EFFICIENCY = "CertifiedEnergyEfficiency"


@dataclass(frozen=True)
class ReportingTier:
    tier: Tier
    context_fields_present: tuple[str, ...] = ()


def context_fields_present(record: ModelRecord) -> tuple[str, ...]:
    present = []
    for name in CONTEXT_FIELDS:
        value = getattr(record, name)
        if value is None or (isinstance(value, str) and not value.strip()):
            continue
        present.append(name)
    return tuple(present)


def classify_reporting(record: ModelRecord, has_certification: bool | None = None) -> ReportingTier:
    """Tier of emission-reporting practice. Certification defaults to the record's energy label."""
    if has_certification is None:
        has_certification = record.has_energy_label
    context = context_fields_present(record)
    if not record.co2_reported:
        tier = Tier.CONTEXT_REPORTING if context else Tier.UNKNOWN_EMISSIONS
    elif not context:
        tier = Tier.BASIC_EMISSION_REPORTING
    elif has_certification:
        tier = Tier.CERTIFIED_ENERGY_EFFICIENCY
    else:
        tier = Tier.ENERGY_AWARENESS
    return ReportingTier(tier, context)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EfficiencyConfig:
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    reference_values: Mapping[str, float] = field(default_factory=dict)
    label_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    reference_model_id: str = DEFAULT_REFERENCE_MODEL

    def __post_init__(self) -> None:
        if set(self.weights) != set(ATTRIBUTES):
            raise ClassificationError(f"weights must cover exactly {list(ATTRIBUTES)}, got {sorted(self.weights)}")
        if any(not (w > 0) for w in self.weights.values()):
            raise ClassificationError("all weights must be > 0")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-12:
            raise ClassificationError(f"weights must sum to 1, got {total!r}")
        t = tuple(float(v) for v in self.label_thresholds)
        if len(t) != 4 or any(not (1 < v < 4) for v in t) or any(a >= b for a, b in zip(t, t[1:])):
            raise ClassificationError(f"label_thresholds must be four ascending values in (1, 4), got {t}")
        object.__setattr__(self, "label_thresholds", t)
        for name, value in self.reference_values.items():
            if name not in ATTRIBUTES:
                raise ClassificationError(f"unknown reference attribute {name!r}")
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ClassificationError(f"reference value for {name} must be > 0, got {value!r}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> EfficiencyConfig:
        data = dict(data)
        weights = dict(DEFAULT_WEIGHTS)
        nested = data.pop("weights", None) or {}
        if not isinstance(nested, Mapping):
            raise ClassificationError("weights must be a mapping")
        for key in [k for k in data if k.startswith("weights.")]:
            nested = {**nested, key.split(".", 1)[1]: data.pop(key)}
        if nested:
            unknown = set(nested) - set(ATTRIBUTES)
            if unknown:
                raise ClassificationError(f"unknown weight attributes {sorted(unknown)}")
            weights.update({k: float(v) for k, v in nested.items()})
        kwargs: dict[str, Any] = {"weights": weights}
        if "label_thresholds" in data:
            kwargs["label_thresholds"] = tuple(data.pop("label_thresholds"))
        if "reference_model_id" in data:
            kwargs["reference_model_id"] = str(data.pop("reference_model_id"))
        if "reference_values" in data:
            kwargs["reference_values"] = dict(data.pop("reference_values") or {})
        if data:
            raise ClassificationError(f"unknown efficiency config keys {sorted(data)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path | str) -> EfficiencyConfig:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, Mapping):
            raise ClassificationError(f"{path}: config root must be a mapping")
        return cls.from_mapping(raw.get("efficiency", raw))


# --------------------------------------------------------------------------
# indexes, scores and quartiles


def compute_index(value: float, reference: float, direction: str) -> float:
    """Index of a value against the reference; lower is better in both directions."""
    if not (value > 0 and reference > 0) or not (math.isfinite(value) and math.isfinite(reference)):
        raise ValueError(f"index needs positive finite inputs, got value={value!r}, reference={reference!r}")
    if direction == "minimize":
        return value / reference
    if direction == "maximize":
        return reference / value
    raise ValueError(f"direction must be 'minimize' or 'maximize', got {direction!r}")


def direction_of(attribute: str) -> str:
    return "minimize" if attribute in MINIMIZE else "maximize"


Normalizers = Mapping[str, tuple[float, float]]


def build_normalizers(metric_maps: Iterable[Mapping[str, float]]) -> dict[str, tuple[float, float]]:
    """Per-metric (min, max) over a corpus."""
    out: dict[str, tuple[float, float]] = {}
    for metrics in metric_maps:
        for name, value in metrics.items():
            lo, hi = out.get(name, (value, value))
            out[name] = (min(lo, value), max(hi, value))
    return dict(sorted(out.items()))


def performance_score(metrics: Mapping[str, float], normalizers: Normalizers | None = None) -> float | None:
    """Harmonic mean of min-max normalized metrics floored at ``EPSILON``; None when no metrics.

    Without normalizers each metric is used as is (identity over [0, 1]). A
    metric whose corpus range is a single point normalizes to 1.
    """
    if not metrics:
        return None
    normalized = []
    for name in sorted(metrics):
        value = metrics[name]
        lo, hi = (0.0, 1.0) if normalizers is None else normalizers.get(name, (0.0, 1.0))
        scaled = 1.0 if hi <= lo else (value - lo) / (hi - lo)
        normalized.append(min(1.0, max(EPSILON, scaled)))
    return len(normalized) / math.fsum(1.0 / v for v in normalized)


def attribute_values(record: ModelRecord, normalizers: Normalizers | None = None) -> dict[str, float]:
    """Raw attribute values entering the label, for the attributes this record has."""
    co2 = record.co2_grams
    if co2 is None or not co2 > 0:
        raise ClassificationError(f"{record.model_id}: labels are defined only for emission reporters")
    values = {"co2": co2}
    if record.model_size_bytes:
        values["size_efficiency"] = record.model_size_bytes / co2
    if record.dataset_size_bytes:
        values["dataset_efficiency"] = record.dataset_size_bytes / co2
    # a download count of zero would give an infinite index
    values["downloads"] = float(max(record.downloads, 1))
    score = performance_score(record.metrics, normalizers)
    if score is not None:
        values["performance"] = score
    return values


def quartile_boundaries(values: Sequence[float]) -> tuple[float, float, float]:
    """25/50/75th percentiles with linear interpolation between order statistics."""
    q = statistics.quantiles(values, n=4, method="inclusive")
    return q[0], q[1], q[2]


def rank_against(value: float, bounds: tuple[float, float, float]) -> int:
    """Quartile rank 1..4; a value on a boundary takes the lower rank."""
    for rank, bound in enumerate(bounds, start=1):
        if value <= bound:
            return rank
    return 4


@dataclass(frozen=True)
class QuartileTable:
    ranks: dict[tuple[str, str], int]
    boundaries: dict[str, tuple[float, float, float]]
    degenerate: frozenset[str] = frozenset()

    def rank(self, attribute: str, index: float) -> int:
        if attribute not in self.boundaries:
            return 2
        return rank_against(index, self.boundaries[attribute])


MIN_QUARTILE_MODELS = 4


def assign_quartiles(indexes: Iterable[tuple[str, str, float]]) -> QuartileTable:
    """Quartile rank per (model_id, attribute).

    Attributes carried by fewer than four models get rank 2 throughout and are
    listed as degenerate.
    """
    columns: dict[str, dict[str, float]] = {}
    for model_id, attribute, index in indexes:
        columns.setdefault(attribute, {})[model_id] = index
    ranks: dict[tuple[str, str], int] = {}
    boundaries = {}
    degenerate = set()
    for attribute in sorted(columns):
        column = columns[attribute]
        if len(column) < MIN_QUARTILE_MODELS:
            degenerate.add(attribute)
            ranks.update({(m, attribute): 2 for m in column})
            continue
        bounds = quartile_boundaries(list(column.values()))
        boundaries[attribute] = bounds
        ranks.update({(m, attribute): rank_against(v, bounds) for m, v in column.items()})
    return QuartileTable(ranks, boundaries, frozenset(degenerate))


def label_for(weighted_mean: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> str:
    return LABELS[bisect_right(list(thresholds), weighted_mean)]


def _exact_weights(weights: Mapping[str, float], present: Iterable[str]) -> dict[str, Fraction]:
    # weights are decimal quantities; exact arithmetic keeps means like 2.2 off the wrong side of a threshold
    present = [a for a in ATTRIBUTES if a in set(present)]
    exact = {a: Fraction(repr(float(weights[a]))) for a in present}
    total = sum(exact.values())
    return {a: w / total for a, w in exact.items()}


def renormalized_weights(weights: Mapping[str, float], present: Iterable[str]) -> dict[str, float]:
    return {a: float(w) for a, w in _exact_weights(weights, present).items()}


def weighted_mean(weights: Mapping[str, float], ranks: Mapping[str, int]) -> float:
    """Mean rank under weights renormalized over the attributes in ``ranks``, rounded once."""
    exact = _exact_weights(weights, ranks)
    return float(sum(w * ranks[a] for a, w in exact.items()))


# --------------------------------------------------------------------------
# corpus labeling


@dataclass(frozen=True)
class CorpusContext:
    reference_values: dict[str, float]
    normalizers: dict[str, tuple[float, float]]
    quartiles: QuartileTable
    reference_source: str


def _resolve_reference(
    records_by_id: Mapping[str, ModelRecord], config: EfficiencyConfig, normalizers: Normalizers
) -> tuple[dict[str, float], str]:
    derived: dict[str, float] = {}
    source = "config"
    ref = records_by_id.get(config.reference_model_id)
    if ref is not None and ref.co2_grams is not None and ref.co2_grams > 0:
        derived = attribute_values(ref, normalizers)
        source = f"model {config.reference_model_id}"
    merged = {**derived, **config.reference_values}
    if config.reference_values and derived:
        source += " + config overrides"
    return merged, source


def build_context(
    reporters: Sequence[ModelRecord],
    config: EfficiencyConfig,
    *,
    corpus: Iterable[ModelRecord] | None = None,
) -> CorpusContext:
    """Reference values, metric normalizers and quartile tables for a set of reporters.

    The reference model is looked up in ``corpus`` (defaults to the reporters).
    Attributes without a reference value are an error rather than a silent default.
    """
    normalizers = build_normalizers(r.metrics for r in reporters)
    by_id = {r.model_id: r for r in (reporters if corpus is None else corpus)}
    reference, source = _resolve_reference(by_id, config, normalizers)
    values = {r.model_id: attribute_values(r, normalizers) for r in reporters}
    needed = sorted({a for v in values.values() for a in v}, key=ATTRIBUTES.index)
    missing = [a for a in needed if a not in reference]
    if missing:
        raise ClassificationError(
            f"no reference value for {missing}: reference model {config.reference_model_id!r} "
            "is absent or lacks them; supply reference_values in the config"
        )
    triples = [
        (model_id, attr, compute_index(v, reference[attr], direction_of(attr)))
        for model_id, attrs in values.items()
        for attr, v in attrs.items()
    ]
    return CorpusContext(reference, normalizers, assign_quartiles(triples), source)


@dataclass(frozen=True)
class EfficiencyResult:
    model_id: str
    indexes: dict[str, float]
    quartile_ranks: dict[str, int]
    present_attributes: tuple[str, ...]
    effective_weights: dict[str, float]
    weighted_mean: float
    label: str
    low_confidence: bool = False
    degenerate_attributes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "label": self.label,
            "weighted_mean": self.weighted_mean,
            "present_attributes": list(self.present_attributes),
            "indexes": dict(self.indexes),
            "quartile_ranks": dict(self.quartile_ranks),
            "effective_weights": dict(self.effective_weights),
            "low_confidence": self.low_confidence,
            "degenerate_attributes": list(self.degenerate_attributes),
        }


def efficiency_label(record: ModelRecord, context: CorpusContext, config: EfficiencyConfig) -> EfficiencyResult:
    values = attribute_values(record, context.normalizers)
    present = tuple(a for a in ATTRIBUTES if a in values)
    indexes = {a: compute_index(values[a], context.reference_values[a], direction_of(a)) for a in present}
    ranks = {a: context.quartiles.rank(a, indexes[a]) for a in present}
    weights = renormalized_weights(config.weights, present)
    mean = weighted_mean(config.weights, ranks)
    return EfficiencyResult(
        model_id=record.model_id,
        indexes=indexes,
        quartile_ranks=ranks,
        present_attributes=present,
        effective_weights=weights,
        weighted_mean=mean,
        label=label_for(mean, config.label_thresholds),
        # downloads are always present, so co2 + downloads is the floor
        low_confidence=set(present) <= {"co2", "downloads"},
        degenerate_attributes=tuple(a for a in present if a in context.quartiles.degenerate),
    )


@dataclass(frozen=True)
class ClassificationRow:
    model_id: str
    tier: Tier
    context_fields_present: tuple[str, ...]
    efficiency: EfficiencyResult | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "model_id": self.model_id,
            "tier": self.tier.value,
            "context_fields_present": list(self.context_fields_present),
        }
        eff = self.efficiency.to_dict() if self.efficiency else {}
        for key in ("label", "weighted_mean", "low_confidence", "degenerate_attributes"):
            out[key] = eff.get(key)
        out["indexes"] = eff.get("indexes", {})
        out["quartile_ranks"] = eff.get("quartile_ranks", {})
        return out


CSV_COLUMNS = (
    ("model_id", "tier", "label", "weighted_mean", "low_confidence", "context_fields_present")
    + tuple(f"index_{a}" for a in ATTRIBUTES)
    + tuple(f"rank_{a}" for a in ATTRIBUTES)
)


def csv_row(row: ClassificationRow) -> dict[str, Any]:
    d = row.to_dict()
    out = {k: d.get(k) for k in CSV_COLUMNS[:5]}
    out["context_fields_present"] = ";".join(d["context_fields_present"])
    for a in ATTRIBUTES:
        out[f"index_{a}"] = d["indexes"].get(a)
        out[f"rank_{a}"] = d["quartile_ranks"].get(a)
    return out


@dataclass
class ClassificationOutput:
    rows: list[ClassificationRow]
    context: CorpusContext | None
    skipped_reason: str | None = None

    def tier_counts(self) -> dict[str, int]:
        counts = {t.value: 0 for t in Tier}
        for row in self.rows:
            counts[row.tier.value] += 1
        return counts

    def label_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for row in self.rows:
            if row.efficiency is not None:
                counts[row.efficiency.label] += 1
        return counts


def classify_corpus(records: Sequence[ModelRecord], config: EfficiencyConfig | None = None) -> ClassificationOutput:
    """Tier for every record and a label for every emission reporter, sorted by model_id.

    When the efficiency context cannot be built (for example no reference
    values), tiers are still produced and the reason is recorded.
    """
    config = config or EfficiencyConfig()
    records = sorted(records, key=lambda r: r.model_id)
    reporters = [r for r in records if r.co2_reported and r.co2_grams is not None and r.co2_grams > 0]
    context = None
    reason = None
    if not reporters:
        reason = "no emission-reporting records"
    else:
        try:
            context = build_context(reporters, config, corpus=records)
        except ClassificationError as exc:
            reason = str(exc)
    reporter_ids = {r.model_id for r in reporters}
    rows = []
    for record in records:
        tier = classify_reporting(record)
        eff = None
        if context is not None and record.model_id in reporter_ids:
            eff = efficiency_label(record, context, config)
        rows.append(ClassificationRow(record.model_id, tier.tier, tier.context_fields_present, eff))
    return ClassificationOutput(rows, context, reason)
