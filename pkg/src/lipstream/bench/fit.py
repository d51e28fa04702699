"""Least-squares scaling fits and the efficiency metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n: int


def ols(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept`` in closed form."""
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 3:
        raise ValueError(f"need at least 3 points for a scaling fit, got {n}")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    if sxx == 0:
        raise ValueError("all x values are identical")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    slope = sxy / sxx
    intercept = my - slope * mx
    syy = sum((b - my) ** 2 for b in y)
    sse = sum((b - (slope * a + intercept)) ** 2 for a, b in zip(x, y))
    r2 = 1.0 if syy == 0 else 1.0 - sse / syy
    return LinearFit(slope, intercept, r2, n)


def fit_scaling(clip_s: Sequence[float], baseline_s: Sequence[float], pipeline_s: Sequence[float]) -> dict:
    b = ols(clip_s, baseline_s)
    p = ols(clip_s, pipeline_s)
    return {
        "slope_baseline": b.slope,
        "slope_pipeline": p.slope,
        "intercept_baseline": b.intercept,
        "intercept_pipeline": p.intercept,
        "r2_baseline": b.r2,
        "r2_pipeline": p.r2,
    }


def efficiency(latency_s: float, peak_mem_gb: float) -> float:
    """``1 / (latency x peak memory)`` in (s*GB)^-1."""
    if latency_s <= 0 or peak_mem_gb <= 0:
        raise ValueError("latency and peak memory must both be positive")
    return 1.0 / (latency_s * peak_mem_gb)
