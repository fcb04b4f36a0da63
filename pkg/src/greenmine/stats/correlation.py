"""Rank and log-linear correlation tests."""

from __future__ import annotations

import math
from collections.abc import Sequence

from .distributions import t_sf, t_two_sided
from .result import StatResult, StatsError


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the average of their positions."""
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(v * v for v in dx)
    syy = math.fsum(v * v for v in dy)
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("correlation undefined for a constant series")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _r_pvalue(r: float, n: int, two_sided: bool) -> float:
    df = n - 2
    if abs(r) == 1.0:
        t = math.copysign(math.inf, r)
    else:
        t = r * math.sqrt(df / ((1.0 - r) * (1.0 + r)))
    return t_two_sided(t, df) if two_sided else t_sf(t, df)


def _check_pair(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise StatsError(f"series lengths differ ({len(x)} vs {len(y)})")
    if len(x) < 3:
        raise StatsError(f"need at least 3 paired observations, got {len(x)}")
    for i, (a, b) in enumerate(zip(x, y)):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise StatsError(f"non-finite value at index {i}")


def spearman(x: Sequence[float], y: Sequence[float], *, two_sided: bool = True) -> StatResult:
    """Spearman's rho with a t-approximation p-value (n - 2 df)."""
    _check_pair(x, y)
    rx, ry = rankdata(x), rankdata(y)
    rho = _pearson_r(rx, ry)
    notes = []
    if len(set(x)) < len(x) or len(set(y)) < len(y):
        notes.append("ties: average ranks")
    return StatResult(
        method="spearman",
        statistic=rho,
        p_value=_r_pvalue(rho, len(x), two_sided),
        n=(len(x),),
        notes=tuple(notes),
    )


def pearson_log(x: Sequence[float], y: Sequence[float], *, two_sided: bool = True) -> StatResult:
    """Pearson correlation of ``ln x`` and ``ln y``."""
    if len(x) != len(y):
        raise StatsError(f"series lengths differ ({len(x)} vs {len(y)})")
    for name, series in (("x", x), ("y", y)):
        for i, v in enumerate(series):
            if not v > 0:
                raise StatsError(f"{name}[{i}] = {v!r} is not positive; log undefined")
    lx = [math.log(v) for v in x]
    ly = [math.log(v) for v in y]
    _check_pair(lx, ly)
    r = _pearson_r(lx, ly)
    return StatResult(
        method="pearson_log",
        statistic=r,
        p_value=_r_pvalue(r, len(x), two_sided),
        n=(len(x),),
        notes=("natural log applied to both series",),
    )
