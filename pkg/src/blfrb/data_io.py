"""CSV ingestion, synthetic data, configuration and results persistence."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dataset import Dataset
from .engine import BLFRBConfig
from .exceptions import ConfigurationError, DataFormatError, ResultsFormatError
from .inference import UncertaintySummary, ci_and_test
from .losses import TukeyLoss
from .robust_fit import FitConfig

SCHEMA_VERSION = 1


def load_csv(path, response_col=0, header=False, delimiter=",") -> Dataset:
    """Read a numeric delimited file; column ``response_col`` is the response.

    Rows are parsed one at a time. Blank lines are skipped. Any cell that is
    not a decimal number, and any row whose width differs from the first
    row, raises :class:`DataFormatError` naming the 1-based line and column.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for line_no, record in enumerate(reader, start=1):
            if header and line_no == 1:
                continue
            if not record or all(not c.strip() for c in record):
                continue
            if width is None:
                width = len(record)
                if not -width <= response_col < width:
                    raise DataFormatError(
                        f"response column {response_col} out of range for {width} columns")
            elif len(record) != width:
                raise DataFormatError(
                    f"line {line_no}: expected {width} columns, found {len(record)} (ragged row)")
            values = []
            for col, cell in enumerate(record, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"line {line_no}, column {col}: not a number: {cell!r}") from None
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    if width < 2:
        raise DataFormatError("need a response column and at least one regressor")
    table = np.asarray(rows, dtype=np.float64)
    y = table[:, response_col]
    Z = np.delete(table, response_col % width, axis=1)
    return Dataset(y=y, Z=Z)


def write_csv(data: Dataset, path, header=False, delimiter=","):
    """Response first, then regressors, in shortest round-trip notation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if header:
            w.writerow(["y"] + [f"z{j + 1}" for j in range(data.p)])
        for yi, zi in zip(data.y, data.Z):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in zi])


def generate_synthetic(n, p, theta=None, sigma0=np.sqrt(0.1), seed=0) -> Dataset:
    """y = Z theta + sigma0 * e with Z and e i.i.d. standard normal.

    Normals come from numpy's ziggurat transform of a Philox stream seeded
    by ``seed``; Z is drawn first (row-major), then e.
    """
    if n <= p:
        raise ConfigurationError(f"need n > p, got n={n}, p={p}")
    theta = np.ones(p) if theta is None else np.asarray(theta, dtype=float)
    if theta.shape != (p,):
        raise ConfigurationError(f"theta must have length {p}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    Z = rng.standard_normal((n, p))
    e = rng.standard_normal(n)
    return Dataset(y=Z @ theta + sigma0 * e, Z=Z)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _fit_to_dict(fit: FitConfig) -> dict:
    d = dataclasses.asdict(fit)
    d["loss0"] = {"c": fit.loss0.c}
    d["loss1"] = {"c": fit.loss1.c}
    return d


def config_to_dict(config: BLFRBConfig) -> dict:
    d = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    d["fit"] = _fit_to_dict(config.fit)
    d["upper_probs"] = list(config.upper_probs)
    return d


def config_from_dict(d: dict) -> BLFRBConfig:
    d = dict(d)
    known = {f.name for f in dataclasses.fields(BLFRBConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    if "fit" in d:
        fit = dict(d["fit"])
        fit_known = {f.name for f in dataclasses.fields(FitConfig)}
        bad = set(fit) - fit_known
        if bad:
            raise ConfigurationError(f"unknown fit keys: {sorted(bad)}")
        for name in ("loss0", "loss1"):
            if name in fit:
                v = fit[name]
                fit[name] = TukeyLoss(v["c"] if isinstance(v, dict) else v)
        d["fit"] = FitConfig(**fit)
    if "upper_probs" in d:
        d["upper_probs"] = tuple(d["upper_probs"])
    try:
        return BLFRBConfig(**d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> dict:
    """Read a JSON configuration overlay."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return d


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to repeat a run: command, config, data identity,
    seeds, per-bag diagnostics and timings."""

    command: str
    config: dict
    dataset: dict
    seeds: dict
    bags: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: str = __version__
    environment: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__})

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def save_results(summaries: dict, manifest: RunManifest, path, tables=None):
    """Write ``{name: UncertaintySummary}`` plus the manifest as JSON.

    ``tables`` holds extra plain-data outputs (traces, reports).
    """
    doc = {
        "schema_version": SCHEMA_VERSION,
        "summaries": {k: s.to_dict() for k, s in summaries.items()},
        "manifest": manifest.to_dict(),
        "tables": tables or {},
    }
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=1)
        os.replace(tmp, path)
    except OSError as exc:
        raise ResultsFormatError(f"cannot write results to {path}: {exc}") from exc


def load_results(path):
    """Inverse of :func:`save_results`: ``(summaries, manifest, tables)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise ResultsFormatError(f"cannot read results {path}: {exc}") from exc
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != SCHEMA_VERSION:
        raise ResultsFormatError(
            f"unsupported results schema version {version!r} (expected {SCHEMA_VERSION})")
    summaries = {k: UncertaintySummary.from_dict(v) for k, v in doc["summaries"].items()}
    return summaries, RunManifest.from_dict(doc["manifest"]), doc.get("tables", {})


def write_ci_table(summary: UncertaintySummary, path, names=None):
    """One row per coordinate: sd, CI endpoints and the reject flag.

    The header spells out both quantile conventions of the endpoints.
    """
    a = summary.alpha
    reject = ci_and_test(summary)
    names = names or [f"theta{j + 1}" for j in range(summary.p)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# lower = upper {1 - a / 2:g} quantile = lower {a / 2:g} quantile; "
                 f"upper = upper {a / 2:g} quantile = lower {1 - a / 2:g} quantile\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = ["coordinate", "estimate", "sd", "ci_lower", "ci_upper", "reject_zero"]
        w.writerow(cols)
        center = summary.center if summary.center is not None else [np.nan] * summary.p
        for j in range(summary.p):
            w.writerow([names[j], repr(float(center[j])), repr(float(summary.sd[j])),
                        repr(float(summary.ci_lower[j])), repr(float(summary.ci_upper[j])),
                        int(reject[j])])
