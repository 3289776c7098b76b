"""Uncertainty summaries computed from bootstrap replica clouds.

Quantiles follow the *upper* convention: ``q_t`` is the value exceeded by a
fraction ``t`` of the replicas, taken as the order statistic of rank
``ceil((1 - t) * r)`` without interpolation. A level ``1 - alpha`` interval
is therefore ``[q_{1-alpha/2}, q_{alpha/2}]``, i.e. the lower ``alpha/2``
and ``1 - alpha/2`` quantiles in the usual convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import InsufficientReplicasError

DEFAULT_UPPER_PROBS = (0.975, 0.95, 0.75, 0.5, 0.25, 0.05, 0.025)


@dataclass(frozen=True)
class UncertaintySummary:
    """Per-coordinate bootstrap SDs, upper quantiles and a ``1 - alpha`` CI."""

    sd: np.ndarray
    quantiles: dict
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    alpha: float
    r_used: int
    center: np.ndarray | None = field(default=None)

    @property
    def p(self) -> int:
        return self.sd.shape[0]

    def to_dict(self) -> dict:
        return {
            "sd": self.sd.tolist(),
            "quantiles": {repr(float(t)): q.tolist() for t, q in self.quantiles.items()},
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "alpha": self.alpha,
            "r_used": self.r_used,
            "center": None if self.center is None else self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintySummary":
        return cls(
            sd=np.asarray(d["sd"], dtype=float),
            quantiles={_key(t): np.asarray(q, dtype=float) for t, q in d["quantiles"].items()},
            ci_lower=np.asarray(d["ci_lower"], dtype=float),
            ci_upper=np.asarray(d["ci_upper"], dtype=float),
            alpha=float(d["alpha"]),
            r_used=int(d["r_used"]),
            center=None if d.get("center") is None else np.asarray(d["center"], dtype=float),
        )

    def __eq__(self, other):
        if not isinstance(other, UncertaintySummary):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _key(t):
    return round(float(t), 12)


def _cloud(replicas):
    a = np.asarray(replicas, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def sd_estimate(replicas, coordinate=None):
    """Sample SD with divisor r - 1, per coordinate of an (r, p) cloud."""
    a = _cloud(replicas)
    r = a.shape[0]
    if r < 2:
        raise InsufficientReplicasError(f"need at least 2 replicas, got {r}")
    centered = a - a.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", centered, centered) / (r - 1))
    if coordinate is not None:
        return float(sd[coordinate])
    return sd if np.ndim(replicas) > 1 else float(sd[0])


def _upper_rank(t, r):
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    # guard float noise such as (1 - 0.95) * 100 = 5.000000000000004
    k = math.ceil((1.0 - t) * r - 1e-9)
    return min(max(k, 1), r)


def quantile_estimate(replicas, t, coordinate=None):
    """Upper ``t`` quantile: the order statistic of rank ``ceil((1 - t) r)``."""
    a = _cloud(replicas)
    r = a.shape[0]
    if r == 0:
        raise InsufficientReplicasError("empty replica cloud")
    k = _upper_rank(t, r)
    q = np.partition(a, k - 1, axis=0)[k - 1]
    if coordinate is not None:
        return float(q[coordinate])
    return q if np.ndim(replicas) > 1 else float(q[0])


def summarize(replicas, alpha=0.05, upper_probs=DEFAULT_UPPER_PROBS, center=None):
    a = _cloud(replicas)
    probs = sorted({_key(t) for t in upper_probs} | {_key(alpha / 2), _key(1 - alpha / 2)})
    quantiles = {t: quantile_estimate(a, t) for t in probs}
    return UncertaintySummary(
        sd=sd_estimate(a),
        quantiles=quantiles,
        ci_lower=quantiles[_key(1 - alpha / 2)],
        ci_upper=quantiles[_key(alpha / 2)],
        alpha=alpha,
        r_used=a.shape[0],
        center=None if center is None else np.asarray(center, dtype=float),
    )


def aggregate(summaries):
    """Arithmetic mean of per-bag summaries, reduced in the given order."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("nothing to aggregate")
    k = len(summaries)

    def mean(arrays):
        total = np.zeros_like(arrays[0], dtype=float)
        for a in arrays:
            total = total + a
        return total / k

    first = summaries[0]
    centers = [s.center for s in summaries]
    return UncertaintySummary(
        sd=mean([s.sd for s in summaries]),
        quantiles={t: mean([s.quantiles[t] for s in summaries]) for t in first.quantiles},
        ci_lower=mean([s.ci_lower for s in summaries]),
        ci_upper=mean([s.ci_upper for s in summaries]),
        alpha=first.alpha,
        r_used=min(s.r_used for s in summaries),
        center=None if any(c is None for c in centers) else mean(centers),
    )


def ci_and_test(summary: UncertaintySummary, alpha=None):
    """Reject H0: theta_l = 0 iff 0 lies outside the CI. Returns a bool array."""
    if alpha is not None and not math.isclose(alpha, summary.alpha):
        lower = summary.quantiles.get(_key(1 - alpha / 2))
        upper = summary.quantiles.get(_key(alpha / 2))
        if lower is None or upper is None:
            raise ValueError(f"summary lacks the quantiles for alpha={alpha}")
    else:
        lower, upper = summary.ci_lower, summary.ci_upper
    return (lower > 0) | (upper < 0)


def asymptotic_sd(sigma0, n, efficiency):
    """sigma0 / sqrt(n * efficiency), the average SD of the estimator."""
    if n <= 0 or not 0 < efficiency <= 1:
        raise ValueError("need n > 0 and efficiency in (0, 1]")
    return sigma0 / math.sqrt(n * efficiency)


def relative_error(sd_hat, sigma0, n, efficiency):
    """|mean_l sd_hat_l - SD_o| / SD_o with SD_o = sigma0 / sqrt(n O)."""
    ref = asymptotic_sd(sigma0, n, efficiency)
    return abs(float(np.mean(sd_hat)) - ref) / ref


@dataclass(frozen=True)
class ConsistencyReport:
    ks_statistic: np.ndarray
    p_value: np.ndarray
    average_ks: float
    grid: np.ndarray
    average_ecdf: np.ndarray
    target_cdf: np.ndarray
    target_sd: float
    r: int

    def passes(self, level=0.01):
        return self.p_value >= level

    def critical_value(self, level=0.01):
        return float(stats.kstwo.isf(level, self.r))

    @property
    def best(self):
        return int(np.argmin(self.ks_statistic))

    @property
    def worst(self):
        return int(np.argmax(self.ks_statistic))


def consistency_diagnostic(replicas, center, n, sigma0, efficiency, grid_size=201):
    """KS comparison of sqrt(n) (replica - center) with N(0, sigma0^2 / O).

    ``replicas`` is one bag's (r, p) cloud and ``center`` its initial
    estimate. Also returns the coordinate-averaged empirical CDF on a grid.
    """
    a = _cloud(replicas)
    r, p = a.shape
    scaled = math.sqrt(n) * (a - np.asarray(center, dtype=float))
    target_sd = sigma0 / math.sqrt(efficiency)
    target = stats.norm(scale=target_sd)
    ks = np.empty(p)
    pv = np.empty(p)
    for l in range(p):
        res = stats.kstest(scaled[:, l], target.cdf)
        ks[l], pv[l] = res.statistic, res.pvalue
    grid = np.linspace(-4 * target_sd, 4 * target_sd, grid_size)
    sorted_cols = np.sort(scaled, axis=0)
    ecdf = np.mean([np.searchsorted(sorted_cols[:, l], grid, side="right") / r
                    for l in range(p)], axis=0)
    # sup distance of the averaged ECDF, evaluated at every replica value
    pooled = np.sort(scaled.ravel())
    avg_at = np.mean([np.searchsorted(sorted_cols[:, l], pooled, side="right") / r
                      for l in range(p)], axis=0)
    avg_before = np.mean([np.searchsorted(sorted_cols[:, l], pooled, side="left") / r
                          for l in range(p)], axis=0)
    cdf = target.cdf(pooled)
    average_ks = float(max(np.max(np.abs(avg_at - cdf)), np.max(np.abs(avg_before - cdf))))
    return ConsistencyReport(ks_statistic=ks, p_value=pv, average_ks=average_ks, grid=grid,
                             average_ecdf=ecdf, target_cdf=target.cdf(grid),
                             target_sd=target_sd, r=r)
