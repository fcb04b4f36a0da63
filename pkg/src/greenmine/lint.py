"""Lint card metadata against the extended carbon-reporting schema."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .cards import EmissionUnit, parse_emission_value, parse_training_type, parse_unit, split_front_matter
from .errors import GreenmineError
from .harmonize import ModelRecord, parse_size

REQUIREMENTS = ("required", "recommended", "type-check", "unit-check")
EXPECTED_TYPES = (
    "mapping", "emissions_block", "emissions", "unit", "number", "integer", "string",
    "size", "training_type", "list_of_mappings", "known_key",
)


class LintError(GreenmineError):
    """Broken rule catalog (content problems are diagnostics, never exceptions)."""


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


_SEVERITY_ORDER = {Severity.ERROR: 0, Severity.WARNING: 1, Severity.INFO: 2}


@dataclass(frozen=True)
class LintDiagnostic:
    severity: Severity
    path: str
    rule_id: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"severity": self.severity.value, "path": self.path, "rule_id": self.rule_id, "message": self.message}

    def sort_key(self) -> tuple[int, str, str]:
        return _SEVERITY_ORDER[self.severity], self.path, self.rule_id


@dataclass(frozen=True)
class LintRule:
    rule_id: str
    key_path: str
    requirement: str
    expected_type: str
    severity: Severity

    def __post_init__(self) -> None:
        if self.requirement not in REQUIREMENTS:
            raise LintError(f"rule {self.rule_id}: unknown requirement {self.requirement!r}")
        if self.expected_type not in EXPECTED_TYPES:
            raise LintError(f"rule {self.rule_id}: unknown expected_type {self.expected_type!r}")
        object.__setattr__(self, "severity", Severity(self.severity))


@dataclass(frozen=True)
class RuleCatalog:
    version: str
    rules: tuple[LintRule, ...]

    def __post_init__(self) -> None:
        for attr in ("rule_id", "key_path"):
            seen = [getattr(r, attr) for r in self.rules]
            dupes = sorted({v for v in seen if seen.count(v) > 1})
            if dupes:
                raise LintError(f"duplicate {attr} in rule catalog: {dupes}")

    @property
    def rule_ids(self) -> frozenset[str]:
        return frozenset(r.rule_id for r in self.rules)

    def by_id(self, rule_id: str) -> LintRule:
        for rule in self.rules:
            if rule.rule_id == rule_id:
                return rule
        raise KeyError(rule_id)

    def extended(self, other: RuleCatalog) -> RuleCatalog:
        """This catalog plus ``other``; rules in ``other`` replace same-id rules."""
        replaced = {r.rule_id for r in other.rules}
        kept = tuple(r for r in self.rules if r.rule_id not in replaced)
        return RuleCatalog(f"{self.version}+{other.version}", kept + other.rules)

    @classmethod
    def from_text(cls, text: str, source: str = "<rules>") -> RuleCatalog:
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise LintError(f"{source}: {exc}") from exc
        if not isinstance(raw, Mapping) or not isinstance(raw.get("rules"), list):
            raise LintError(f"{source}: expected a mapping with a 'rules' list")
        try:
            rules = tuple(LintRule(**{**r, "key_path": str(r.get("key_path", ""))}) for r in raw["rules"])
        except TypeError as exc:
            raise LintError(f"{source}: {exc}") from exc
        return cls(str(raw.get("version", "unversioned")), rules)

    @classmethod
    def load(cls, path: Path | str) -> RuleCatalog:
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))


@lru_cache(maxsize=1)
def default_catalog() -> RuleCatalog:
    text = resources.files("greenmine.data").joinpath("lint_rules.yaml").read_text(encoding="utf-8")
    return RuleCatalog.from_text(text, "lint_rules.yaml")


# --------------------------------------------------------------------------
# value checks; each returns (severity override or None, message) pairs


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_emissions(v: Any) -> list[tuple[Severity | None, str]]:
    value, unit, note = parse_emission_value(v)
    if value is None:
        return [(None, f"emissions must be a number in grams of CO2e ({note})")]
    out: list[tuple[Severity | None, str]] = []
    if value < 0:
        out.append((None, f"emissions must be >= 0, got {value}"))
    if unit is EmissionUnit.KILOGRAMS:
        out.append((Severity.WARNING, "unit implies kilograms; report in grams of CO2e"))
    return out


def _check_unit(v: Any) -> list[tuple[Severity | None, str]]:
    unit = parse_unit(str(v))
    if unit is None:
        return [(None, f"unrecognized unit {v!r}; report emissions as a number in grams")]
    if unit is EmissionUnit.KILOGRAMS:
        return [(None, "unit implies kilograms; report in grams of CO2e")]
    return []


def _simple(ok: bool, message: str) -> list[tuple[Severity | None, str]]:
    return [] if ok else [(None, message)]


def _check_value(expected: str, v: Any) -> list[tuple[Severity | None, str]]:
    if expected == "emissions":
        return _check_emissions(v)
    if expected == "unit":
        return _check_unit(v)
    if expected == "mapping":
        return _simple(isinstance(v, dict), f"expected a mapping, got {type(v).__name__}")
    if expected == "emissions_block":
        ok = isinstance(v, (dict, str)) or _is_number(v)
        return _simple(ok, f"expected a mapping or a number, got {type(v).__name__}")
    if expected == "number":
        return _simple(_is_number(v) and v >= 0, f"expected a non-negative number, got {v!r}")
    if expected == "integer":
        ok = _is_number(v) and float(v).is_integer() and v >= 0
        return _simple(ok, f"expected a non-negative integer, got {v!r}")
    if expected == "string":
        return _simple(isinstance(v, str) and bool(v.strip()), f"expected a non-empty string, got {v!r}")
    if expected == "size":
        return _simple(parse_size(v) is not None, f"expected a size in bytes (number or '3.2 GB'), got {v!r}")
    if expected == "training_type":
        ok = parse_training_type(v) is not None
        return _simple(ok, f"expected 'pre-training' and/or 'fine-tuning', got {v!r}")
    if expected == "list_of_mappings":
        ok = isinstance(v, list) and bool(v) and all(isinstance(item, dict) for item in v)
        return _simple(ok, "expected a non-empty list of mappings")
    raise LintError(f"no checker for expected_type {expected!r}")


# --------------------------------------------------------------------------
# path resolution


@dataclass(frozen=True)
class _Slot:
    path: str
    present: bool
    value: Any = None


def _join(prefix: str, key: str) -> str:
    return key if not prefix else f"{prefix}.{key}"


def _resolve(tree: Mapping[str, Any], key_path: str, expected: str) -> list[_Slot]:
    """Concrete locations for a rule path whose parent exists in the tree."""
    segments = key_path.split(".")
    nodes: list[tuple[str, Any]] = [("", tree)]
    for depth, segment in enumerate(segments):
        last = depth == len(segments) - 1
        many = segment.endswith("[]")
        key = segment[:-2] if many else segment
        next_nodes = []
        for prefix, node in nodes:
            path = _join(prefix, key)
            if not isinstance(node, dict):
                # a legacy scalar emissions block stands for its own value
                if last and expected == "emissions" and node is not None:
                    return [_Slot(prefix, True, node)]
                if last and prefix:
                    next_nodes.append((path, _Slot(path, False)))
                continue
            if key not in node:
                if last:
                    next_nodes.append((path, _Slot(path, False)))
                continue
            value = node[key]
            if many:
                if isinstance(value, list):
                    next_nodes.extend((f"{path}[{i}]", item) for i, item in enumerate(value) if isinstance(item, dict))
            else:
                next_nodes.append((path, _Slot(path, True, value) if last else value))
        nodes = next_nodes
    return [slot for _, slot in nodes if isinstance(slot, _Slot)]


def _unknown_keys(tree: Mapping[str, Any], rule: LintRule, catalog: RuleCatalog) -> list[LintDiagnostic]:
    parent_path = rule.key_path[: -len(".*")]
    parent: Any = tree
    for segment in parent_path.split("."):
        parent = parent.get(segment) if isinstance(parent, dict) else None
    if not isinstance(parent, dict):
        return []
    known = {
        r.key_path[len(parent_path) + 1 :].split(".")[0].removesuffix("[]")
        for r in catalog.rules
        if r.key_path.startswith(parent_path + ".") and not r.key_path.endswith("*")
    }
    return [
        LintDiagnostic(rule.severity, f"{parent_path}.{key}", rule.rule_id, f"key {key!r} is not part of the schema")
        for key in sorted(map(str, parent))
        if key not in known
    ]


def lint_metadata(front_matter: Mapping[str, Any] | None, catalog: RuleCatalog | None = None) -> list[LintDiagnostic]:
    """Diagnostics for a parsed front-matter tree, sorted by (severity, path)."""
    catalog = catalog or default_catalog()
    tree = dict(front_matter or {})
    out: list[LintDiagnostic] = []
    for rule in catalog.rules:
        if rule.key_path == "":
            continue
        if rule.expected_type == "known_key":
            out.extend(_unknown_keys(tree, rule, catalog))
            continue
        for slot in _resolve(tree, rule.key_path, rule.expected_type):
            if not slot.present:
                if rule.requirement in ("required", "recommended"):
                    out.append(LintDiagnostic(rule.severity, slot.path, rule.rule_id, f"missing {rule.requirement} key"))
                continue
            for override, message in _check_value(rule.expected_type, slot.value):
                out.append(LintDiagnostic(override or rule.severity, slot.path, rule.rule_id, message))
    return sorted(set(out), key=LintDiagnostic.sort_key)


def lint_card_text(text: str, catalog: RuleCatalog | None = None) -> list[LintDiagnostic]:
    """Lint a whole card; unreadable front matter becomes a single error."""
    from .cards import CardParseError

    catalog = catalog or default_catalog()
    try:
        tree, _ = split_front_matter(text)
    except CardParseError as exc:
        return [LintDiagnostic(Severity.ERROR, "", "front-matter", str(exc))]
    return lint_metadata(tree, catalog)


def exit_code(diagnostics: Iterable[LintDiagnostic]) -> int:
    """0 clean (info allowed), 1 warnings only, 2 any error."""
    severities = {d.severity for d in diagnostics}
    if Severity.ERROR in severities:
        return 2
    if Severity.WARNING in severities:
        return 1
    return 0


def format_text(path: str, diagnostics: Sequence[LintDiagnostic]) -> str:
    lines = [f"{path}: {d.severity.value}: {d.path or '<document>'}: {d.message} [{d.rule_id}]" for d in diagnostics]
    return "\n".join(lines)


def format_json(diagnostics: Sequence[LintDiagnostic]) -> str:
    return json.dumps([d.to_dict() for d in diagnostics], indent=2)


# --------------------------------------------------------------------------
# coverage


COVERAGE_FIELDS = {
    "emissions": lambda r: r.co2_grams is not None,
    "training_type": lambda r: r.training_type is not None,
    "geographical_location": lambda r: bool(r.geographical_location),
    "hardware_used": lambda r: bool(r.hardware_used),
    "model_file_size": lambda r: r.model_size_bytes is not None,
    "datasets_size": lambda r: r.dataset_size_bytes is not None,
    "performance_metrics": lambda r: bool(r.metrics),
    "energy_label": lambda r: r.has_energy_label,
}


@dataclass(frozen=True)
class CoverageSummary:
    reporters: int
    percentages: dict[str, float]
    empty: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def coverage_summary(records: Iterable[ModelRecord]) -> CoverageSummary:
    """Percentage of emission reporters carrying each schema field."""
    reporters = [r for r in records if r.co2_reported]
    n = len(reporters)
    pct = {
        name: (100.0 * sum(1 for r in reporters if has(r)) / n if n else 0.0)
        for name, has in COVERAGE_FIELDS.items()
    }
    return CoverageSummary(n, pct, n == 0)
