"""Statistics engine for the carbon-reporting analyses.

Pure Python; every test returns a :class:`StatResult`.
"""

from .correlation import pearson_log, rankdata, spearman
from .multitest import holm_bonferroni
from .normality import shapiro_wilk
from .ranktests import mann_whitney_u
from .regression import breusch_pagan, ols_slope_ttest
from .result import SlopeTest, StatResult, StatsConfig, StatsError

__all__ = [
    "SlopeTest",
    "StatResult",
    "StatsConfig",
    "StatsError",
    "breusch_pagan",
    "holm_bonferroni",
    "mann_whitney_u",
    "ols_slope_ttest",
    "pearson_log",
    "rankdata",
    "shapiro_wilk",
    "spearman",
]
