"""Breakdown-point arithmetic and contamination injectors."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, subsample_size
from .exceptions import ConfigurationError

TABLE_P = (50, 100, 200)
TABLE_N = (50000, 200000, 1000000)
TABLE_GAMMA = (0.6, 0.7, 0.8)

# norm ratio above which a contaminated estimate counts as broken down
BREAKDOWN_FACTOR = 10.0


def s_breakdown(b: int, p: int) -> float:
    """Finite-sample breakdown point (floor(b/2) - p + 2) / b of the S-stage on b points."""
    if b <= p:
        raise ConfigurationError(f"need b > p, got b={b}, p={p}")
    value = (b // 2 - p + 2) / b
    if value <= 0:
        raise ConfigurationError(f"breakdown formula is not positive for b={b}, p={p}")
    if b // 2 - p + 2 == 1:
        warnings.warn(f"b={b}, p={p}: a single point breaks the S-stage", RuntimeWarning,
                      stacklevel=2)
    return value


def empty_cell_probability(n: int, gamma: float) -> float:
    """Probability (1 - 1/b)^n that a given bag point is absent from a
    multinomial(n, 1/b) resample, with b = floor(n^gamma)."""
    if n < 2:
        raise ConfigurationError("n must be at least 2")
    b = subsample_size(n, gamma)
    if b == 1:
        return 0.0
    return math.exp(n * math.log1p(-1.0 / b))


lemma1_probability = empty_cell_probability


@dataclass(frozen=True)
class BreakdownRow:
    p: int
    n: int
    gamma: float
    b: int
    delta: float | None

    @property
    def feasible(self) -> bool:
        return self.delta is not None


@dataclass(frozen=True)
class BreakdownReport:
    rows: tuple

    def lookup(self, p, n, gamma):
        for row in self.rows:
            if row.p == p and row.n == n and math.isclose(row.gamma, gamma):
                return row
        raise KeyError((p, n, gamma))

    def _grid(self):
        ps = sorted({r.p for r in self.rows})
        ns = sorted({r.n for r in self.rows})
        gs = sorted({r.gamma for r in self.rows})
        return ps, ns, gs

    def to_text(self, digits=3) -> str:
        ps, ns, gs = self._grid()
        header = f"{'p':>5} {'n':>9} | " + " ".join(f"{'g=' + format(g, 'g'):>9}" for g in gs)
        lines = [header, "-" * len(header)]
        for p in ps:
            for n in ns:
                cells = []
                for g in gs:
                    row = self.lookup(p, n, g)
                    cells.append(f"{row.delta:>9.{digits}f}" if row.feasible else f"{'n/a':>9}")
                lines.append(f"{p:>5} {n:>9} | " + " ".join(cells))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "n", "gamma", "b", "delta_b"])
        for r in self.rows:
            w.writerow([r.p, r.n, repr(r.gamma), r.b, "" if r.delta is None else repr(r.delta)])
        return buf.getvalue()


def breakdown_table(p_list=TABLE_P, n_list=TABLE_N, gamma_list=TABLE_GAMMA) -> BreakdownReport:
    """Cross product of upper breakdown points; infeasible cells get ``delta=None``."""
    rows = []
    for p in p_list:
        for n in n_list:
            for g in gamma_list:
                b = subsample_size(n, g)
                try:
                    delta = s_breakdown(b, p)
                except ConfigurationError:
                    delta = None
                rows.append(BreakdownRow(p=int(p), n=int(n), gamma=float(g), b=b, delta=delta))
    return BreakdownReport(rows=tuple(rows))


@dataclass(frozen=True)
class ContaminationManifest:
    rows: np.ndarray
    alpha: float
    mode: str

    def to_dict(self):
        return {"rows": self.rows.tolist(), "alpha": self.alpha, "mode": self.mode}


MODES = ("response", "row")


def contaminate(data: Dataset, fraction=None, count=None, alpha=1000.0, target=None,
                seed=0, mode="response"):
    """Multiply selected records by ``alpha``.

    Exactly one of ``fraction`` and ``count`` is given. ``target`` restricts
    the choice to a set of row indices (e.g. one bag); ``fraction`` is then
    taken of that set, rounded down. ``mode="response"`` scales y only and
    produces vertical outliers; ``mode="row"`` scales y and z together.
    Returns ``(new_dataset, manifest)``; the input is untouched.
    """
    if (fraction is None) == (count is None):
        raise ConfigurationError("give exactly one of fraction and count")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    if not math.isfinite(alpha):
        raise ConfigurationError("alpha must be finite")
    pool = np.arange(data.n) if target is None else np.unique(np.asarray(target, dtype=np.intp))
    if fraction is not None:
        if not 0 <= fraction < 1:
            raise ConfigurationError("fraction must lie in [0, 1)")
        count = int(math.floor(fraction * pool.size + 1e-9))
    if not 0 <= count <= pool.size:
        raise ConfigurationError(f"count must lie in [0, {pool.size}]")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    rows = np.sort(rng.choice(pool, size=count, replace=False))
    y = np.array(data.y)
    Z = np.array(data.Z)
    y[rows] *= alpha
    if mode == "row":
        Z[rows] *= alpha
        if data.intercept:
            Z[rows, 0] = 1.0
    return Dataset(y=y, Z=Z, intercept=data.intercept), ContaminationManifest(rows, float(alpha), mode)


def broken_down(estimate, clean_estimate, factor=BREAKDOWN_FACTOR) -> bool:
    """True when the estimate's norm reaches ``factor`` times the clean one, or is not finite."""
    est = np.asarray(estimate, dtype=float)
    if not np.all(np.isfinite(est)):
        return True
    return bool(np.linalg.norm(est) >= factor * np.linalg.norm(clean_estimate))
