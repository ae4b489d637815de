"""Sampling-error bands and distribution distances used by the checks."""
from __future__ import annotations

import numpy as np
from scipy import stats


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov statistic of 1D ``samples`` against a CDF callable."""
    return float(stats.kstest(np.asarray(samples, float).ravel(), cdf).statistic)


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Exact one-sample KS critical value at level ``alpha`` for ``n`` samples."""
    return float(stats.kstwo.isf(alpha, n))


def binomial_halfwidth(p: float, n: int, k: float = 3.0) -> float:
    return float(k * np.sqrt(p * (1 - p) / n))


def total_variation(p, q) -> float:
    return float(0.5 * np.sum(np.abs(np.asarray(p, float) - np.asarray(q, float))))


def convergence_order(errors, ratio: float = 2.0) -> np.ndarray:
    """Observed orders log(e_k / e_{k+1}) / log(ratio) for successive refinements."""
    e = np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
