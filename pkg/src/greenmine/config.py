"""Pipeline configuration file (YAML) shared by the CLI stages."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .classify import EfficiencyConfig
from .errors import GreenmineError
from .harmonize import DEFAULT_TAG_THRESHOLD
from .registry import DEFAULT_API_BASE
from .stats import StatsConfig

SECTIONS = ("registry", "harmonize", "stats", "efficiency", "report")


class ConfigError(GreenmineError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    stats: StatsConfig = field(default_factory=StatsConfig)
    efficiency: EfficiencyConfig = field(default_factory=EfficiencyConfig)
    tag_threshold: int = DEFAULT_TAG_THRESHOLD
    overrides: Path | None = None
    exclude_months: tuple[str, ...] = ()
    api_base: str = DEFAULT_API_BASE
    page_size: int = 1000
    max_workers: int = 8
    retry_attempts: int = 3

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], base_dir: Path | None = None) -> PipelineConfig:
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}; expected {list(SECTIONS)}")

        def section(name: str) -> dict[str, Any]:
            value = raw.get(name) or {}
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {name!r} must be a mapping")
            return dict(value)

        kwargs: dict[str, Any] = {}
        try:
            stats = section("stats")
            if stats:
                kwargs["stats"] = StatsConfig(**stats)
            eff = section("efficiency")
            if eff:
                kwargs["efficiency"] = EfficiencyConfig.from_mapping(eff)
            harm = section("harmonize")
            if "tag_threshold" in harm:
                kwargs["tag_threshold"] = int(harm.pop("tag_threshold"))
            if "overrides" in harm:
                path = Path(harm.pop("overrides"))
                kwargs["overrides"] = path if base_dir is None or path.is_absolute() else base_dir / path
            if harm:
                raise ConfigError(f"unknown harmonize keys {sorted(harm)}")
            rep = section("report")
            if "exclude_months" in rep:
                kwargs["exclude_months"] = tuple(str(m) for m in rep.pop("exclude_months") or ())
            if rep:
                raise ConfigError(f"unknown report keys {sorted(rep)}")
            reg = section("registry")
            for key, target in (("api_base", "api_base"), ("page_size", "page_size"),
                                ("max_workers", "max_workers"), ("retry_attempts", "retry_attempts")):
                if key in reg:
                    kwargs[target] = reg.pop(key)
            if reg:
                raise ConfigError(f"unknown registry keys {sorted(reg)}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path | str | None) -> PipelineConfig:
        if path is None:
            return cls()
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, Mapping):
            raise ConfigError(f"{path}: config root must be a mapping")
        return cls.from_mapping(raw, path.parent)
