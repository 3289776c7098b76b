"""Regression sample container and input validation helpers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_array, check_X_y

from .exceptions import ConfigurationError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` (length n) and design ``Z`` (n x p).

    When ``intercept`` is true the first column of ``Z`` is the constant 1
    column added by :meth:`from_arrays`.
    """

    y: np.ndarray
    Z: np.ndarray
    intercept: bool = False

    def __post_init__(self):
        Z, y = check_X_y(self.Z, self.y, dtype=np.float64, y_numeric=True,
                         ensure_min_samples=1)
        Z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_arrays(cls, X, y, intercept=False):
        X = check_array(X, dtype=np.float64)
        if intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return cls(y=y, Z=X, intercept=intercept)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(y=self.y[idx], Z=self.Z[idx], intercept=self.intercept)

    def expand(self, counts) -> "Dataset":
        """Replicate row i ``counts[i]`` times (the explicit bootstrap sample)."""
        counts = np.asarray(counts, dtype=np.intp)
        idx = np.repeat(np.arange(self.n), counts)
        return self.subset(idx)

    def fingerprint(self) -> dict:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(np.ascontiguousarray(self.Z).tobytes())
        return {"n": self.n, "p": self.p, "intercept": self.intercept,
                "sha256": h.hexdigest()}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.intercept == other.intercept
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.Z, other.Z))

    __hash__ = None


def check_weights(weights, n):
    """Validate a multiplicity vector; ``None`` means unit weights."""
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    return w


def subsample_size(n: int, gamma: float) -> int:
    """b = floor(n ** gamma), guarded against pow() landing just below an integer."""
    if n < 1:
        raise ConfigurationError(f"n must be positive, got {n}")
    x = float(n) ** float(gamma)
    b = int(np.floor(x))
    if b + 1 - x <= 1e-9 * x:
        b += 1
    return max(b, 1)
