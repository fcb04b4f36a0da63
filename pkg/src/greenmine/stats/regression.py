"""Linear trend fitting: OLS slope t-test and the Breusch-Pagan check."""

from __future__ import annotations

import math
from collections.abc import Sequence

from .distributions import chi2_sf_1df, t_sf, t_two_sided
from .normality import shapiro_wilk
from .result import SlopeTest, StatResult, StatsError

# residual sum of squares below this fraction of the total counts as an exact fit
_PERFECT_FIT_RTOL = 1e-24


def _fit(t: Sequence[float], y: Sequence[float]) -> tuple[float, float, list[float], float]:
    n = len(t)
    mt = math.fsum(t) / n
    my = math.fsum(y) / n
    stt = math.fsum((v - mt) ** 2 for v in t)
    sty = math.fsum((a - mt) * (b - my) for a, b in zip(t, y))
    slope = sty / stt
    intercept = my - slope * mt
    residuals = [b - (intercept + slope * a) for a, b in zip(t, y)]
    return slope, intercept, residuals, stt


def breusch_pagan(residuals: Sequence[float], t: Sequence[float]) -> StatResult:
    """Koenker's studentized Breusch-Pagan LM = n * R^2 of e^2 on [1, t]."""
    n = len(residuals)
    if n != len(t) or n < 3:
        raise StatsError("need at least 3 residuals aligned with regressors")
    e2 = [r * r for r in residuals]
    _, _, aux_resid, _ = _fit(t, e2)
    mean = math.fsum(e2) / n
    sst = math.fsum((v - mean) ** 2 for v in e2)
    if sst == 0.0:
        return StatResult("breusch_pagan", 0.0, 1.0, (n,), notes=("constant squared residuals",))
    r2 = 1.0 - math.fsum(v * v for v in aux_resid) / sst
    lm = n * max(0.0, r2)
    return StatResult("breusch_pagan", lm, chi2_sf_1df(lm), (n,), notes=("koenker studentized", "df=1"))


def ols_slope_ttest(series: Sequence[tuple[float, float]], *, two_sided: bool = True) -> SlopeTest:
    """Fit y = b0 + b1 t by least squares and test H0: b1 = 0."""
    n = len(series)
    if n < 3:
        raise StatsError(f"need at least 3 points, got {n}")
    t = [float(p[0]) for p in series]
    y = [float(p[1]) for p in series]
    if len(set(t)) != n:
        raise StatsError("time indexes must be distinct")
    if not all(math.isfinite(v) for v in y):
        raise StatsError("non-finite response value")

    slope, intercept, residuals, stt = _fit(t, y)
    ssr = math.fsum(r * r for r in residuals)
    my = math.fsum(y) / n
    syy = math.fsum((v - my) ** 2 for v in y)
    df = n - 2

    if syy == 0.0:
        result = StatResult("ols_slope_t", 0.0, 1.0, (n,), notes=("constant series",))
        return SlopeTest(result, 0.0, intercept, 0.0, tuple(residuals), degenerate=False)
    if ssr <= _PERFECT_FIT_RTOL * syy:
        result = StatResult(
            "ols_slope_t", math.copysign(math.inf, slope), 0.0, (n,),
            notes=("perfect fit: zero residual variance, diagnostics skipped",),
        )
        return SlopeTest(result, slope, intercept, 0.0, tuple(residuals), degenerate=True)

    stderr = math.sqrt(ssr / df / stt)
    tstat = slope / stderr
    p = t_two_sided(tstat, df) if two_sided else t_sf(tstat, df)
    result = StatResult("ols_slope_t", tstat, p, (n,), notes=(f"df={df}",))

    normality = homoscedasticity = None
    try:
        normality = shapiro_wilk(residuals)
    except StatsError:
        pass
    homoscedasticity = breusch_pagan(residuals, t)
    return SlopeTest(
        result, slope, intercept, stderr, tuple(residuals),
        normality=normality, homoscedasticity=homoscedasticity,
    )
