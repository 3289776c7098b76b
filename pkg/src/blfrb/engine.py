"""Bag construction, replica generation and cross-bag aggregation.

Random streams are keyed, never shared: every stream is a Philox generator
seeded with ``SeedSequence(master_seed, spawn_key=key)`` where ``key`` is

* ``(0,)`` for the bag partition,
* ``(1, k)`` for the initial fit of bag ``k``,
* ``(2, k, j)`` for the multinomial weights of replica ``j`` in bag ``k``,
* ``(3, k, j)`` for a full re-solve of replica ``j`` in bag ``k``.

A replica's value therefore depends only on (data, config, k, j), which makes
results independent of thread count and lets an adaptive schedule extend a
run without changing the replicas already drawn.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import frb
from .dataset import Dataset, subsample_size
from .exceptions import (BLFRBError, ConfigurationError, ConvergenceError,
                         DegenerateScaleError, SingularDesignError)
from .inference import DEFAULT_UPPER_PROBS, UncertaintySummary, aggregate, summarize
from .robust_fit import DEFAULT_FIT_CONFIG, FitConfig, fit_ls, fit_mm

logger = logging.getLogger(__name__)

METHODS = ("BLFRB-MM", "BLB-MM-full", "BLB-LS", "classical-bootstrap")
CORRECTIONS = ("joint", "theta", "identity")
REPLICA_SOLVERS = ("one-step", "full")

_NUMERIC_ERRORS = (SingularDesignError, ConvergenceError, DegenerateScaleError,
                   np.linalg.LinAlgError)


class NumericalFailure(BLFRBError, RuntimeError):
    """Too many bags failed for the aggregate to be trusted."""


@dataclass(frozen=True)
class BLFRBConfig:
    gamma: float = 0.7
    n_bags: int | None = None
    r: int = 100
    seed: int = 0
    method: str = "BLFRB-MM"
    alpha: float = 0.05
    upper_probs: tuple = DEFAULT_UPPER_PROBS
    fit: FitConfig = DEFAULT_FIT_CONFIG
    correction: str = "joint"
    replica_solver: str = "one-step"
    threads: int = 1
    max_failed_fraction: float = 0.2
    skip_flag_fraction: float = 0.01

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.correction not in CORRECTIONS:
            raise ConfigurationError(f"correction must be one of {CORRECTIONS}")
        if self.replica_solver not in REPLICA_SOLVERS:
            raise ConfigurationError(f"replica_solver must be one of {REPLICA_SOLVERS}")
        if not 0.6 <= self.gamma <= 0.9:
            raise ConfigurationError(f"gamma must lie in [0.6, 0.9], got {self.gamma}")
        if self.r < 1:
            raise ConfigurationError("r must be at least 1")
        if self.n_bags is not None and self.n_bags < 1:
            raise ConfigurationError("n_bags must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    def bag_size(self, n: int) -> int:
        if self.method == "classical-bootstrap":
            return n
        return subsample_size(n, self.gamma)

    def bags_for(self, n: int) -> int:
        if self.method == "classical-bootstrap":
            return 1
        b = self.bag_size(n)
        # default: as many disjoint bags as fit into the sample
        return self.n_bags if self.n_bags is not None else max(n // b, 1)

    def check_feasible(self, n: int, p: int):
        b = self.bag_size(n)
        s = self.bags_for(n)
        if b <= p:
            raise ConfigurationError(
                f"bag size b={b} must exceed the dimension p={p}; increase gamma")
        if s * b > n:
            raise ConfigurationError(
                f"{s} disjoint bags of size {b} need {s * b} rows but n={n}")
        return b, s


def _generator(seed, *key):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def draw_weights(b: int, n: int, seed) -> np.ndarray:
    """Multinomial(n, 1_b / b) counts.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts, or a
    Generator. Drawn as b iid Poisson(n / b) counts with total T, then
    corrected to n: add n - T uniform balls, or remove T - n balls chosen
    uniformly without replacement. Given T the Poisson counts are
    multinomial(T), and both corrections map that to multinomial(n) exactly.
    numpy's own multinomial uses conditional binomials whose sampler switches
    from inversion to rejection at a mean of 30, so its cost depends on n/b;
    this draw costs O(b + sqrt(n)) for any n/b >= 10.
    """
    if b < 1 or n < 1:
        raise ValueError("need b >= 1 and n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if b == 1:
        return np.array([n], dtype=np.int64)
    counts = rng.poisson(n / b, size=b).astype(np.int64)
    total = int(counts.sum())
    if total < n:
        counts += np.bincount(rng.integers(0, b, size=n - total), minlength=b)
    elif total > n:
        counts -= rng.multivariate_hypergeometric(counts, total - n, method="marginals")
    return counts


@dataclass
class Bag:
    index: int
    indices: np.ndarray
    fit: object = None
    corr: object = None
    replicas: list = field(default_factory=list)
    sigma_replicas: list = field(default_factory=list)
    skipped: int = 0
    attempted: int = 0
    error: str | None = None
    elapsed: float = 0.0

    @property
    def failed(self) -> bool:
        return self.error is not None

    def flagged(self, threshold=0.01) -> bool:
        return self.attempted > 0 and self.skipped > threshold * self.attempted

    def cloud(self) -> np.ndarray:
        return np.asarray(self.replicas, dtype=float)

    def diagnostics(self, threshold=0.01) -> dict:
        d = {"bag": self.index, "size": int(self.indices.size), "replicas": len(self.replicas),
             "skipped": self.skipped, "flagged": self.flagged(threshold),
             "error": self.error, "elapsed_s": self.elapsed}
        if isinstance(self.fit, np.ndarray):
            d["theta"] = self.fit.tolist()
        elif self.fit is not None:
            d.update(theta=self.fit.theta_mm.tolist(), sigma=self.fit.sigma, exact_fit=self.fit.exact,
                     iterations=dict(self.fit.iterations))
        if self.corr is not None:
            d["condition_estimate"] = self.corr.condition_estimate
        return d


def draw_bags(data: Dataset, config: BLFRBConfig) -> list:
    """Disjoint index sets: s * b rows sampled without replacement, then split."""
    b, s = config.check_feasible(data.n, data.p)
    if config.method == "classical-bootstrap":
        return [Bag(index=0, indices=np.arange(data.n))]
    chosen = _generator(config.seed, 0).choice(data.n, size=s * b, replace=False)
    return [Bag(index=k, indices=np.sort(chosen[k * b:(k + 1) * b])) for k in range(s)]


@dataclass
class RunResult:
    config: BLFRBConfig
    n: int
    p: int
    bags: list
    bag_summaries: list
    aggregate: UncertaintySummary
    elapsed: float

    @property
    def failed_bags(self):
        return [bag.index for bag in self.bags if bag.failed]

    @property
    def flagged_bags(self):
        return [bag.index for bag in self.bags if bag.flagged(self.config.skip_flag_fraction)]

    @property
    def point_estimate(self):
        return self.aggregate.center


class BLFRBRun:
    """Stateful handle: bags keep their fits, correction operators and
    replicas, so :meth:`extend` only computes what is new."""

    def __init__(self, data: Dataset, config: BLFRBConfig, progress=None, weight_sampler=None):
        self.data = data
        self.config = config
        self.progress = progress
        # weight_sampler(b, n, rng) -> counts; replaces the multinomial draw
        self.weight_sampler = weight_sampler or draw_weights
        self.bags = draw_bags(data, config)
        self.elapsed = 0.0
        self._prepared = False

    @property
    def n(self):
        return self.data.n

    def _bag_data(self, bag):
        return self.data.subset(bag.indices)

    def _prepare_bag(self, bag):
        cfg = self.config
        data = self._bag_data(bag)
        t0 = time.perf_counter()
        try:
            if cfg.method == "BLB-LS":
                bag.fit = fit_ls(data)
            elif cfg.method in ("BLB-MM-full", "classical-bootstrap"):
                # the re-solve baselines need no fit on the unweighted bag
                pass
            else:
                bag.fit = fit_mm(data, config=cfg.fit, seed=_generator(cfg.seed, 1, bag.index))
                if cfg.method == "BLFRB-MM":
                    bag.corr = self._correction(bag.fit, data)
        except _NUMERIC_ERRORS as exc:
            bag.error = f"{type(exc).__name__}: {exc}"
            logger.warning("bag %d failed: %s", bag.index, bag.error)
        bag.elapsed += time.perf_counter() - t0

    def _correction(self, fit, data):
        cfg = self.config
        p = fit.p
        if cfg.correction == "identity":
            return frb.CorrectionOperator(matrix=np.eye(p + 1), jacobian=np.zeros((p + 1, p + 1)),
                                          condition_estimate=1.0, joint=False)
        return frb.correction_operator(fit, data, cfg.fit.loss0, cfg.fit.loss1,
                                       joint=cfg.correction == "joint")

    def _replica(self, bag, data, j):
        cfg = self.config
        counts = self.weight_sampler(data.n, self.n, _generator(cfg.seed, 2, bag.index, j))
        if cfg.method == "BLFRB-MM" and cfg.replica_solver == "one-step":
            rep = frb.frb_replica(bag.fit, data, counts, bag.corr, cfg.fit.loss0, cfg.fit.loss1,
                                  weight_seed=(cfg.seed, 2, bag.index, j))
            return rep.theta_star, rep.sigma_star
        if cfg.method == "BLB-LS":
            return fit_ls(data, counts), np.nan
        fit = fit_mm(data, counts, config=cfg.fit, seed=_generator(cfg.seed, 3, bag.index, j))
        return fit.theta_mm, fit.sigma

    def _extend_bag(self, bag, r):
        if bag.failed:
            return
        data = self._bag_data(bag)
        t0 = time.perf_counter()
        for j in range(bag.attempted, r):
            bag.attempted += 1
            try:
                theta, sigma = self._replica(bag, data, j)
            except _NUMERIC_ERRORS:
                bag.skipped += 1
                continue
            bag.replicas.append(theta)
            bag.sigma_replicas.append(sigma)
        bag.elapsed += time.perf_counter() - t0

    def _map_bags(self, fn):
        if self.config.threads > 1 and len(self.bags) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                list(pool.map(fn, self.bags))
        else:
            for bag in self.bags:
                fn(bag)

    def extend(self, r: int) -> RunResult:
        """Bring every bag to ``r`` attempted replicas and summarize."""
        t0 = time.perf_counter()
        if not self._prepared:
            self._map_bags(self._prepare_bag)
            self._prepared = True
        self._map_bags(lambda bag: self._extend_bag(bag, r))
        self.elapsed += time.perf_counter() - t0
        return self._result()

    def _bag_summary(self, bag):
        cloud = bag.cloud()
        if cloud.shape[0] < 2:
            return None
        if bag.fit is None:
            center = cloud.mean(axis=0)
        else:
            center = bag.fit if isinstance(bag.fit, np.ndarray) else bag.fit.theta_mm
        return summarize(cloud, self.config.alpha, self.config.upper_probs, center=center)

    def _result(self) -> RunResult:
        summaries = []
        for bag in self.bags:
            s = None if bag.failed else self._bag_summary(bag)
            if s is None and not bag.failed:
                bag.error = "fewer than 2 usable replicas"
            summaries.append(s)
        ok = [s for s in summaries if s is not None]
        n_failed = len(summaries) - len(ok)
        if not ok or n_failed > self.config.max_failed_fraction * len(self.bags):
            raise NumericalFailure(
                f"{n_failed} of {len(self.bags)} bags failed: "
                + "; ".join(f"bag {b.index}: {b.error}" for b in self.bags if b.failed))
        result = RunResult(config=self.config, n=self.data.n, p=self.data.p, bags=self.bags,
                           bag_summaries=summaries, aggregate=aggregate(ok),
                           elapsed=self.elapsed)
        if self.progress is not None:
            for bag, s in zip(self.bags, summaries):
                self.progress({"bag": bag.index, "r": len(bag.replicas),
                               "elapsed_ms": 1000.0 * bag.elapsed,
                               "sd_mean": None if s is None else float(np.mean(s.sd))})
            self.progress({"bag": "aggregate", "r": result.aggregate.r_used,
                           "elapsed_ms": 1000.0 * self.elapsed,
                           "sd_mean": float(np.mean(result.aggregate.sd))})
        return result


def run(data: Dataset, config: BLFRBConfig, progress=None, weight_sampler=None) -> RunResult:
    """One pass of the bootstrap with ``config.r`` replicas per bag."""
    return BLFRBRun(data, config, progress, weight_sampler).extend(config.r)


@dataclass(frozen=True)
class TraceRow:
    r: int
    aggregate: UncertaintySummary
    elapsed: float


def adaptive_schedule(handle, r_schedule, progress=None) -> list:
    """Grow a run through an increasing replica schedule.

    ``handle`` is a :class:`BLFRBRun` or a ``(data, config)`` pair. Returns
    one :class:`TraceRow` per schedule entry with cumulative elapsed time.
    """
    if isinstance(handle, tuple):
        handle = BLFRBRun(*handle, progress=progress)
    schedule = [int(r) for r in r_schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 2:
        raise ConfigurationError("r schedule must be strictly increasing and start at >= 2")
    trace = []
    for r in schedule:
        result = handle.extend(r)
        trace.append(TraceRow(r=r, aggregate=result.aggregate, elapsed=handle.elapsed))
    return trace


def with_method(config: BLFRBConfig, method: str) -> BLFRBConfig:
    return replace(config, method=method)
