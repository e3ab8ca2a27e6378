"""Batch-means confidence intervals for Monte Carlo estimates.

Samples are split into contiguous batches in particle order, so a statistic
depends only on the per-particle values and never on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats as _st

BATCHES = 20
LEVEL = 0.95


@dataclass(frozen=True)
class StatEstimate:
    """Point value with a 95% half-width from batch means."""

    value: float
    ci: float
    samples: int
    batches: int = BATCHES
    low_sample: bool = False

    def __post_init__(self):
        if self.ci < 0 or math.isnan(self.ci):
            raise ValueError(f"confidence half-width must be >= 0, got {self.ci!r}")

    @classmethod
    def exact(cls, value: float, samples: int = 1) -> "StatEstimate":
        return cls(float(value), 0.0, samples, 0, samples < BATCHES)

    def as_dict(self) -> dict:
        return {"value": self.value, "ci": self.ci, "samples": self.samples, "batches": self.batches, "low_sample": self.low_sample}


def t_quantile(batches: int, level: float = LEVEL) -> float:
    return float(_st.t.ppf(0.5 + level / 2.0, batches - 1))


def _split(n: int, batches: int) -> list[slice]:
    edges = np.linspace(0, n, batches + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def batch_means(values, batches: int = BATCHES) -> np.ndarray:
    """Per-batch means along axis 0, shape ``(batches, ...)``."""
    v = np.asarray(values, dtype=np.float64)
    return np.stack([v[s].mean(axis=0) for s in _split(v.shape[0], batches)])


def estimate_mean(values, batches: int = BATCHES) -> StatEstimate:
    """Sample mean with a batch-means 95% half-width."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    n = v.size
    if n == 0:
        raise ValueError("no samples")
    low = n < batches
    b = min(batches, n)
    value = float(v.mean())
    if b < 2:
        return StatEstimate(value, 0.0, n, b, True)
    means = batch_means(v, b)
    spread = float(np.std(means, ddof=1))
    return StatEstimate(value, t_quantile(b) * spread / math.sqrt(b), n, b, low)


def batch_statistic(fn: Callable[..., float], *columns, batches: int = BATCHES) -> StatEstimate:
    """Smooth function of several sample means with a batch-level half-width.

    ``fn`` receives the column means. The point value uses all samples; the
    half-width is the t-interval of ``fn`` evaluated on the batch means.
    """
    cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("columns must have equal length")
    value = float(fn(*[c.mean() for c in cols]))
    b = min(batches, n)
    if b < 2:
        return StatEstimate(value, 0.0, n, b, True)
    parts = [float(fn(*[c[s].mean() for c in cols])) for s in _split(n, b)]
    spread = float(np.std(parts, ddof=1))
    if not np.isfinite(spread):
        spread = math.inf
    return StatEstimate(value, t_quantile(b) * spread / math.sqrt(b), n, b, n < batches)


def combined_ci(*cis: float) -> float:
    return float(math.sqrt(sum(c * c for c in cis)))
