"""Shapiro-Wilk W test (Royston's AS R94 approximation)."""

from __future__ import annotations

import math
from collections.abc import Sequence

from .distributions import norm_sf
from .result import StatResult, StatsError

_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _ppnd(p: float) -> float:
    """Normal quantile, Beasley-Springer AS 111, as called by AS R94."""
    q = p - 0.5
    if abs(q) <= 0.42:
        r = q * q
        return q * (((-25.44106049637 * r + 41.39119773534) * r - 18.61500062529) * r + 2.50662823884) / (
            (((3.13082909833 * r - 21.06224101826) * r + 23.08336743743) * r - 8.47351093090) * r + 1.0
        )
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    value = (((2.32121276858 * r + 4.85014127135) * r - 2.29796479134) * r - 2.78718931138) / (
        (1.63706781897 * r + 3.54388924762) * r + 1.0
    )
    return -value if q < 0 else value


def _poly(coef: Sequence[float], x: float) -> float:
    result = 0.0
    for c in reversed(coef):
        result = result * x + c
    return result


def shapiro_coefficients(n: int) -> list[float]:
    """Weights for the upper half of the order statistics, largest first."""
    nn2 = n // 2
    if n == 3:
        return [math.sqrt(0.5)]
    m = [_ppnd((i - 0.375) / (n + 0.25)) for i in range(1, nn2 + 1)]
    summ2 = 2.0 * math.fsum(v * v for v in m)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    a = [0.0] * nn2
    if n > 5:
        first = 2
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt(
            (summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2) / (1.0 - 2.0 * a1**2 - 2.0 * a2**2)
        )
        a[1] = a2
    else:
        first = 1
        fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1**2))
    a[0] = a1
    for i in range(first, nn2):
        a[i] = -m[i] / fac
    return a


def _w_pvalue(w: float, n: int) -> float:
    if n == 3:
        return max(0.0, 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0))
    w1 = math.log(1.0 - w)
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return 1e-99
        w1 = -math.log(gamma - w1)
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln_n = math.log(n)
        mean = _poly(_C5, ln_n)
        sd = math.exp(_poly(_C6, ln_n))
    return norm_sf((w1 - mean) / sd)


def shapiro_wilk(x: Sequence[float]) -> StatResult:
    n = len(x)
    if not 3 <= n <= 5000:
        raise StatsError(f"Shapiro-Wilk needs 3 <= n <= 5000, got n={n}")
    if not all(math.isfinite(v) for v in x):
        raise StatsError("non-finite value in sample")
    xs = sorted(x)
    if xs[0] == xs[-1]:
        raise StatsError("Shapiro-Wilk undefined for a constant sample")
    a = shapiro_coefficients(n)
    # centre on the median to limit cancellation in the sums of squares
    centre = xs[n // 2]
    y = [v - centre for v in xs]
    numerator = math.fsum(a[i] * (y[n - 1 - i] - y[i]) for i in range(len(a)))
    mean = math.fsum(y) / n
    ss = math.fsum((v - mean) ** 2 for v in y)
    coef_ss = 2.0 * math.fsum(v * v for v in a)
    w = numerator**2 / (coef_ss * ss)
    w = min(w, 1.0)
    return StatResult(
        method="shapiro_wilk",
        statistic=w,
        p_value=min(1.0, _w_pvalue(w, n)),
        n=(n,),
    )
