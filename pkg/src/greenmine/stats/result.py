from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

METHODS = (
    "spearman",
    "pearson_log",
    "mann_whitney_u",
    "shapiro_wilk",
    "ols_slope_t",
    "breusch_pagan",
)


class StatsError(ValueError):
    """Input a test cannot be computed on (too short, constant, non-positive)."""


@dataclass(frozen=True)
class StatsConfig:
    alpha: float = 0.05
    two_sided: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class StatResult:
    method: str
    statistic: float
    p_value: float
    n: tuple[int, ...]
    adjusted_p: float | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value out of range: {self.p_value}")

    def with_adjusted(self, adjusted_p: float) -> StatResult:
        return replace(self, adjusted_p=adjusted_p)

    def significant(self, alpha: float = 0.05) -> bool:
        p = self.p_value if self.adjusted_p is None else self.adjusted_p
        return p < alpha

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "adjusted_p": self.adjusted_p,
            "n": list(self.n),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class SlopeTest:
    """OLS trend fit with its slope t-test and residual diagnostics."""

    result: StatResult
    slope: float
    intercept: float
    stderr: float
    residuals: tuple[float, ...]
    degenerate: bool = False
    normality: StatResult | None = None
    homoscedasticity: StatResult | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.result.to_dict(),
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "degenerate": self.degenerate,
            "diagnostics": {
                "residual_normality": None if self.normality is None else self.normality.to_dict(),
                "homoscedasticity": None if self.homoscedasticity is None else self.homoscedasticity.to_dict(),
            },
        }
