"""Time series, the analysis family with Holm correction, and report artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import statistics
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import serialize
from .cards import BOUNDED_METRICS, TrainingType
from .classify import (
    CSV_COLUMNS,
    ClassificationOutput,
    ClassificationRow,
    EfficiencyConfig,
    classify_corpus,
    csv_row,
)
from .errors import GreenmineError
from .harmonize import Domain, ModelRecord
from .stats import (
    SlopeTest,
    StatResult,
    StatsConfig,
    StatsError,
    holm_bonferroni,
    mann_whitney_u,
    ols_slope_ttest,
    pearson_log,
    spearman,
)

REPORT_KEYS = (
    "generated_at",
    "snapshot_ref",
    "series",
    "stat_results",
    "classification_histograms",
    "per_domain_tables",
)


class ReportError(GreenmineError):
    pass


# --------------------------------------------------------------------------
# monthly series


@dataclass(frozen=True)
class MonthlySeries:
    points: tuple[tuple[str, float, int], ...] = ()

    def __post_init__(self) -> None:
        months = [p[0] for p in self.points]
        if any(a >= b for a, b in zip(months, months[1:])):
            raise ValueError("series months must be strictly ascending")
        if any(p[2] < 1 for p in self.points):
            raise ValueError("every series point needs n >= 1")

    @property
    def months(self) -> list[str]:
        return [p[0] for p in self.points]

    @property
    def values(self) -> list[float]:
        return [p[1] for p in self.points]

    def __len__(self) -> int:
        return len(self.points)

    def to_list(self) -> list[dict[str, Any]]:
        return [{"year_month": m, "value": v, "n": n} for m, v, n in self.points]


def month_ordinal(year_month: str) -> int:
    year, month = year_month.split("-")
    return int(year) * 12 + int(month) - 1


def _by_month(records: Iterable[ModelRecord]) -> dict[str, list[ModelRecord]]:
    groups: dict[str, list[ModelRecord]] = defaultdict(list)
    for r in records:
        if r.year_month is not None:
            groups[r.year_month].append(r)
    return dict(sorted(groups.items()))


def monthly_reporting_share(records: Iterable[ModelRecord]) -> MonthlySeries:
    """Percentage of each month's new models that report emissions."""
    points = []
    for month, group in _by_month(records).items():
        reporters = sum(1 for r in group if r.co2_reported)
        points.append((month, 100.0 * reporters / len(group), len(group)))
    return MonthlySeries(tuple(points))


def monthly_median_emissions(records: Iterable[ModelRecord], exclude_months: Iterable[str] = ()) -> MonthlySeries:
    """Median grams CO2e per month over emission reporters."""
    records = list(records)
    missing = [r.model_id for r in records if r.co2_grams is None]
    if missing:
        raise ValueError(f"median series needs emissions on every record; missing for {missing[:3]}")
    excluded = set(exclude_months)
    points = [
        (month, statistics.median(r.co2_grams for r in group), len(group))
        for month, group in _by_month(records).items()
        if month not in excluded
    ]
    return MonthlySeries(tuple(points))


def domain_share_series(records: Iterable[ModelRecord]) -> dict[str, dict[str, MonthlySeries]]:
    """Per-domain composition share and within-domain reporting share, month by month."""
    composition: dict[str, list] = defaultdict(list)
    reporting: dict[str, list] = defaultdict(list)
    for month, group in _by_month(records).items():
        per_domain: dict[Domain, list[ModelRecord]] = defaultdict(list)
        for r in group:
            per_domain[r.domain].append(r)
        for domain in sorted(per_domain, key=lambda d: d.value):
            members = per_domain[domain]
            composition[domain.value].append((month, 100.0 * len(members) / len(group), len(group)))
            share = 100.0 * sum(1 for r in members if r.co2_reported) / len(members)
            reporting[domain.value].append((month, share, len(members)))
    return {
        "domain_share": {d: MonthlySeries(tuple(p)) for d, p in sorted(composition.items())},
        "domain_reporting_share": {d: MonthlySeries(tuple(p)) for d, p in sorted(reporting.items())},
    }


def quarterly_domain_reporting_share(records: Iterable[ModelRecord]) -> dict[str, list[dict[str, Any]]]:
    """Within-domain reporting share per calendar quarter."""
    groups: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    for r in records:
        if r.year_month is None:
            continue
        year, month = r.year_month.split("-")
        quarter = f"{year}-Q{(int(month) - 1) // 3 + 1}"
        cell = groups[r.domain.value][quarter]
        cell[0] += int(r.co2_reported)
        cell[1] += 1
    return {
        domain: [{"quarter": q, "value": 100.0 * c[0] / c[1], "n": c[1]} for q, c in sorted(quarters.items())]
        for domain, quarters in sorted(groups.items())
    }


# --------------------------------------------------------------------------
# analysis family


@dataclass(frozen=True)
class StatEntry:
    test_id: str
    description: str
    result: StatResult | None = None
    slope: SlopeTest | None = None
    skip_reason: str | None = None

    @property
    def executed(self) -> bool:
        return self.result is not None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"test_id": self.test_id, "description": self.description}
        if self.result is None:
            out["status"] = f"skipped: {self.skip_reason}"
            return out
        out["status"] = "executed"
        if self.slope is not None:
            out.update(self.slope.to_dict())
        # the family-adjusted result supersedes the slope fit's copy
        out.update(self.result.to_dict())
        return out


def _attempt(test_id: str, description: str, run: Callable[[], StatResult | SlopeTest]) -> StatEntry:
    try:
        value = run()
    except StatsError as exc:
        return StatEntry(test_id, description, skip_reason=str(exc))
    if isinstance(value, SlopeTest):
        return StatEntry(test_id, description, value.result, value)
    return StatEntry(test_id, description, value)


def _trend_points(series: MonthlySeries) -> list[tuple[float, float]]:
    if not series:
        return []
    origin = month_ordinal(series.months[0])
    return [(float(month_ordinal(m) - origin), v) for m, v, _ in series.points]


def _from_first_reporting_month(series: MonthlySeries) -> MonthlySeries:
    for i, value in enumerate(series.values):
        if value > 0:
            return MonthlySeries(series.points[i:])
    return MonthlySeries()


def _need(condition: bool, reason: str) -> None:
    if not condition:
        raise StatsError(reason)


def analysis_family(
    records: Sequence[ModelRecord],
    config: StatsConfig,
    *,
    share: MonthlySeries,
    median: MonthlySeries,
) -> list[StatEntry]:
    reporters = [r for r in records if r.co2_reported and r.co2_grams is not None]
    sided = config.two_sided
    entries = []

    def slope(series: MonthlySeries) -> SlopeTest:
        _need(len(series) >= 3, f"{len(series)} monthly points, need at least 3")
        return ols_slope_ttest(_trend_points(series), two_sided=sided)

    trimmed = _from_first_reporting_month(share)
    entries.append(_attempt("reporting_share_trend", "OLS slope of the monthly reporting share", lambda: slope(trimmed)))
    entries.append(_attempt("median_emissions_trend", "OLS slope of the monthly median emissions",
                            lambda: slope(median)))

    for metric in sorted(BOUNDED_METRICS):
        pairs = [(r.metrics[metric], r.co2_grams) for r in reporters if metric in r.metrics]

        def run(pairs=pairs) -> StatResult:
            _need(len(pairs) >= 3, f"{len(pairs)} reporters carry this metric, need at least 3")
            return spearman([p[0] for p in pairs], [p[1] for p in pairs], two_sided=sided)

        entries.append(_attempt(f"performance_spearman.{metric}", f"Spearman of {metric} vs emissions", run))

    for attr, label in (("model_size_bytes", "model_size"), ("dataset_size_bytes", "dataset_size")):
        pairs = [(getattr(r, attr), r.co2_grams) for r in reporters if getattr(r, attr) and r.co2_grams > 0]

        def run(pairs=pairs) -> StatResult:
            _need(len(pairs) >= 3, f"{len(pairs)} reporters with positive {label}, need at least 3")
            return pearson_log([p[0] for p in pairs], [p[1] for p in pairs], two_sided=sided)

        entries.append(_attempt(f"size_log_pearson.{label}", f"Pearson of log {label} vs log emissions", run))

    def groups(key: Callable[[ModelRecord], bool]) -> list[float]:
        return [r.co2_grams for r in reporters if key(r)]

    fine = groups(lambda r: r.training_type is TrainingType.FINE_TUNING)
    pre = groups(lambda r: r.training_type is TrainingType.PRETRAINING)

    def run_training() -> StatResult:
        _need(fine and pre, f"fine-tuning n={len(fine)}, pretraining n={len(pre)}; both groups must be non-empty")
        return mann_whitney_u(fine, pre, two_sided=sided)

    entries.append(_attempt("training_type_mwu", "Mann-Whitney U of fine-tuning vs pretraining emissions",
                            run_training))

    nlp = groups(lambda r: r.domain is Domain.NLP)
    cv = groups(lambda r: r.domain is Domain.COMPUTER_VISION)

    def run_domain() -> StatResult:
        _need(nlp and cv, f"NLP n={len(nlp)}, ComputerVision n={len(cv)}; both groups must be non-empty")
        return mann_whitney_u(nlp, cv, two_sided=sided)

    entries.append(_attempt("domain_mwu.nlp_vs_cv", "Mann-Whitney U of NLP vs ComputerVision emissions", run_domain))

    sized = [r for r in reporters if r.domain in (Domain.NLP, Domain.COMPUTER_VISION) and r.model_size_bytes]

    def run_confounder() -> StatResult:
        _need(len(sized) >= 3, f"{len(sized)} NLP/CV reporters with model size, need at least 3")
        is_nlp = [1.0 if r.domain is Domain.NLP else 0.0 for r in sized]
        return spearman(is_nlp, [r.model_size_bytes for r in sized], two_sided=sided)

    entries.append(_attempt("domain_size_spearman", "Spearman of NLP membership vs model size", run_confounder))
    return apply_family_correction(entries)


def apply_family_correction(entries: Sequence[StatEntry]) -> list[StatEntry]:
    """Holm adjustment across every executed top-level test."""
    executed = [i for i, e in enumerate(entries) if e.executed]
    adjusted = holm_bonferroni([entries[i].result.p_value for i in executed])
    out = list(entries)
    for i, adj in zip(executed, adjusted):
        e = entries[i]
        result = e.result.with_adjusted(adj)
        out[i] = StatEntry(e.test_id, e.description, result, e.slope, None)
    return out


# --------------------------------------------------------------------------
# tables


def _emission_summary(values: Sequence[float]) -> dict[str, Any]:
    if not values:
        return {"reporters": 0, "median_g": None, "mean_g": None, "min_g": None, "max_g": None}
    return {
        "reporters": len(values),
        "median_g": statistics.median(values),
        "mean_g": math.fsum(values) / len(values),
        "min_g": min(values),
        "max_g": max(values),
    }


def per_domain_tables(records: Sequence[ModelRecord]) -> dict[str, Any]:
    by_domain: dict[str, list[ModelRecord]] = defaultdict(list)
    for r in records:
        by_domain[r.domain.value].append(r)
    domain_rows = []
    for domain in sorted(by_domain):
        members = by_domain[domain]
        values = [r.co2_grams for r in members if r.co2_reported]
        domain_rows.append({
            "domain": domain,
            "models": len(members),
            "reporting_share_pct": 100.0 * len(values) / len(members),
            **_emission_summary(values),
        })
    by_type: dict[str, list[float]] = defaultdict(list)
    for r in records:
        if r.co2_reported:
            key = "unknown" if r.training_type is None else r.training_type.value
            by_type[key].append(r.co2_grams)
    type_rows = [{"training_type": k, **_emission_summary(v)} for k, v in sorted(by_type.items())]
    reporters = [r.co2_grams for r in records if r.co2_reported]
    return {
        "overall": {"models": len(records), **_emission_summary(reporters)},
        "by_domain": domain_rows,
        "by_training_type": type_rows,
        "quarterly_domain_reporting_share": quarterly_domain_reporting_share(records),
    }


def classification_histograms(output: ClassificationOutput, total: int) -> dict[str, Any]:
    labeled = sum(1 for r in output.rows if r.efficiency is not None)
    return {
        "tiers": output.tier_counts(),
        "labels": output.label_counts(),
        "totals": {"records": total, "tiered": len(output.rows), "labeled": labeled},
        "label_skip_reason": output.skipped_reason,
    }


# --------------------------------------------------------------------------
# report


@dataclass
class AnalysisReport:
    generated_at: str
    snapshot_ref: str
    series: dict[str, MonthlySeries]
    stat_results: list[StatEntry]
    classification_histograms: dict[str, Any]
    per_domain_tables: dict[str, Any]
    classification_rows: list[ClassificationRow] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "generated_at": self.generated_at,
            "snapshot_ref": self.snapshot_ref,
            "series": {name: s.to_list() for name, s in self.series.items()},
            "stat_results": [e.to_dict() for e in self.stat_results],
            "classification_histograms": self.classification_histograms,
            "per_domain_tables": self.per_domain_tables,
        }


def build_series(records: Sequence[ModelRecord], exclude_months: Iterable[str] = ()) -> dict[str, MonthlySeries]:
    reporters = [r for r in records if r.co2_reported]
    series = {
        "reporting_share": monthly_reporting_share(records),
        "median_emissions": monthly_median_emissions(reporters, exclude_months),
    }
    for family, per_domain in domain_share_series(records).items():
        for domain, s in per_domain.items():
            series[f"{family}.{domain}"] = s
    return {name: s for name, s in series.items() if len(s)}


def run_analysis(
    records: Sequence[ModelRecord],
    stats_config: StatsConfig | None = None,
    efficiency_config: EfficiencyConfig | None = None,
    *,
    generated_at: str,
    snapshot_ref: str,
    exclude_months: Iterable[str] = (),
    classification: ClassificationOutput | None = None,
) -> AnalysisReport:
    """Every series, test and table over a harmonized corpus.

    Tests short of data are reported as skipped rather than failing the run.
    """
    if not records:
        raise ReportError("cannot analyse an empty corpus")
    stats_config = stats_config or StatsConfig()
    records = sorted(records, key=lambda r: r.model_id)
    exclude_months = tuple(sorted(set(exclude_months)))
    series = build_series(records, exclude_months)
    entries = analysis_family(
        records,
        stats_config,
        share=series.get("reporting_share", MonthlySeries()),
        median=series.get("median_emissions", MonthlySeries()),
    )
    if classification is None:
        classification = classify_corpus(records, efficiency_config)
    return AnalysisReport(
        generated_at=generated_at,
        snapshot_ref=snapshot_ref,
        series=series,
        stat_results=entries,
        classification_histograms=classification_histograms(classification, len(records)),
        per_domain_tables=per_domain_tables(records),
        classification_rows=list(classification.rows),
    )


# --------------------------------------------------------------------------
# artifacts


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([serialize.csv_cell(v) for v in row])
    return buf.getvalue()


def series_csv(series: MonthlySeries) -> str:
    return _csv_text(("year_month", "value", "n"), series.points)


def classification_csv(rows: Sequence[ClassificationRow]) -> str:
    return _csv_text(CSV_COLUMNS, ([csv_row(r)[c] for c in CSV_COLUMNS] for r in rows))


def summary_text(report: AnalysisReport) -> str:
    lines = [f"generated_at: {report.generated_at}", f"snapshot: {report.snapshot_ref}", ""]
    overall = report.per_domain_tables.get("overall", {})
    if overall:
        lines.append(f"models: {overall['models']}  reporters: {overall['reporters']}")
        if overall.get("median_g") is not None:
            lines.append(
                f"emissions median {serialize.format_float(overall['median_g'])} g, "
                f"mean {serialize.format_float(overall['mean_g'])} g"
            )
        lines.append("")
    lines.append("tests (raw p / Holm-adjusted p):")
    for e in report.stat_results:
        if e.result is None:
            lines.append(f"  {e.test_id}: skipped: {e.skip_reason}")
        else:
            r = e.result
            lines.append(
                f"  {e.test_id}: {r.method} statistic={serialize.format_float(r.statistic)} "
                f"p={serialize.format_float(r.p_value)} adjusted_p={serialize.format_float(r.adjusted_p)} n={list(r.n)}"
            )
    hist = report.classification_histograms
    if hist:
        lines.append("")
        lines.append("reporting tiers: " + ", ".join(f"{k}={v}" for k, v in hist.get("tiers", {}).items()))
        lines.append("efficiency labels: " + ", ".join(f"{k}={v}" for k, v in hist.get("labels", {}).items()))
        if hist.get("label_skip_reason"):
            lines.append(f"labels skipped: {hist['label_skip_reason']}")
    return "\n".join(lines) + "\n"


def _histogram_csv(counts: Mapping[str, int], key: str) -> str:
    return _csv_text((key, "count"), counts.items())


def render_artifacts(report: AnalysisReport) -> dict[str, str]:
    """File name to text for every artifact, in manifest order."""
    files = {"report.json": serialize.dumps(report.to_dict())}
    for name, s in report.series.items():
        files[f"{name}.csv"] = series_csv(s)
    hist = report.classification_histograms
    if report.classification_rows:
        files["classification.csv"] = classification_csv(report.classification_rows)
    if hist.get("tiers") and any(hist["tiers"].values()):
        files["classification_tiers.csv"] = _histogram_csv(hist["tiers"], "tier")
    if hist.get("labels") and any(hist["labels"].values()):
        files["classification_labels.csv"] = _histogram_csv(hist["labels"], "label")
    files["summary.txt"] = summary_text(report)
    return files


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    sha256: str
    bytes: int


def emit_report(report: AnalysisReport, out_dir: Path | str) -> list[ManifestEntry]:
    """Write every artifact plus ``manifest.json``; on failure nothing written is left behind."""
    out_dir = Path(out_dir)
    files = render_artifacts(report)
    manifest = []
    written: list[Path] = []
    created_dir = not out_dir.exists()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            data = text.encode("utf-8")
            target = out_dir / name
            written.append(target)
            target.write_bytes(data)
            manifest.append(ManifestEntry(name, hashlib.sha256(data).hexdigest(), len(data)))
        target = out_dir / "manifest.json"
        written.append(target)
        target.write_text(
            serialize.dumps({"files": [{"path": m.path, "sha256": m.sha256, "bytes": m.bytes} for m in manifest]}),
            encoding="utf-8",
        )
    except OSError as exc:
        for path in written:
            if path.is_file():
                path.unlink()
        if created_dir:
            try:
                out_dir.rmdir()
            except OSError:
                pass
        raise ReportError(f"writing report to {out_dir} failed: {exc}") from exc
    return manifest


__all__ = [
    "AnalysisReport",
    "ManifestEntry",
    "MonthlySeries",
    "REPORT_KEYS",
    "ReportError",
    "StatEntry",
    "apply_family_correction",
    "build_series",
    "domain_share_series",
    "emit_report",
    "monthly_median_emissions",
    "monthly_reporting_share",
    "per_domain_tables",
    "run_analysis",
]
