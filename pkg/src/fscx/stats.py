"""Summary statistics and paired comparisons across seeds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SampleSummary:
    iqm: float
    iqr: float
    n: int
    samples: tuple


def iqm_iqr(samples) -> SampleSummary:
    """Interquartile mean (drop floor(n/4) from each end) and Q3 - Q1 with linear quantiles."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("iqm_iqr needs at least one sample")
    k = n // 4
    core = x[k:n - k]
    q1, q3 = np.percentile(x, [25, 75], method="linear")
    return SampleSummary(float(core.mean()), float(q3 - q1), n, tuple(float(v) for v in x))


@dataclass(frozen=True)
class SignTestResult:
    p_value: float | None  # None when every sample ties the reference
    above: int
    n: int

    @property
    def defined(self) -> bool:
        return self.p_value is not None


def sign_test(samples, m: float = 0.0) -> SignTestResult:
    """One-sided exact sign test of H1: P(X > m) > 1/2; ties with ``m`` are dropped."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("sign_test needs at least one sample")
    kept = x[x != m]
    n = int(kept.size)
    k = int((kept > m).sum())
    if n == 0:
        return SignTestResult(None, 0, 0)
    tail = sum(math.comb(n, j) for j in range(k, n + 1))
    return SignTestResult(tail / 2**n, k, n)


def paired_sign_test(a, b) -> SignTestResult:
    """Sign test on paired differences a_i - b_i (H1: a tends to exceed b)."""
    return sign_test(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), 0.0)
