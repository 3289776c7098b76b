"""Tukey biweight loss family used by the S- and MM-stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: 50% breakdown tuning for the scale (S) stage.
C0_BREAKDOWN = 1.547
#: 95% Gaussian efficiency tuning for the regression (MM) stage.
C1_EFFICIENCY = 4.685
#: Asymptotic Gaussian efficiency of the MM-estimator tuned with ``C1_EFFICIENCY``.
MM_EFFICIENCY = 0.95


@dataclass(frozen=True)
class TukeyLoss:
    """Tukey's biweight with rho(u) = c**2 / 6 for ``|u| >= c``.

    All methods are vectorized and accept scalars or arrays.
    """

    c: float
    _inv_c2: float = field(init=False, repr=False, compare=False)
    _inv_c4: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = float(self.c)
        if not np.isfinite(c) or c <= 0:
            raise ValueError(f"tuning constant must be positive and finite, got {self.c!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_inv_c2", 1.0 / (c * c))
        object.__setattr__(self, "_inv_c4", 1.0 / (c * c * c * c))

    @property
    def rho_max(self) -> float:
        return self.c * self.c / 6.0

    def rho(self, u):
        u = np.asarray(u, dtype=float)
        # the polynomial equals c^2/6 at u^2 = c^2, so clipping replaces the branch
        u2 = np.minimum(u * u, self.c * self.c)
        return u2 * (0.5 - u2 * (0.5 * self._inv_c2 - u2 * self._inv_c4 / 6.0))

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        t = 1.0 - u * u * self._inv_c2
        return np.where(np.abs(u) < self.c, u * t * t, 0.0)

    def psi_deriv(self, u):
        u = np.asarray(u, dtype=float)
        t = u * u * self._inv_c2
        return np.where(np.abs(u) < self.c, (1.0 - t) * (1.0 - 5.0 * t), 0.0)

    def weight_deriv(self, u):
        u = np.asarray(u, dtype=float)
        t = np.maximum(1.0 - u * u * self._inv_c2, 0.0)
        return -4.0 * u * self._inv_c2 * t

    def weight(self, u):
        """psi(u) / u, equal to 1 at the removable singularity u = 0."""
        u = np.asarray(u, dtype=float)
        # (1 - u^2/c^2)^2 is the closed form of psi(u)/u, so u = 0 needs no special casing
        t = np.maximum(1.0 - u * u * self._inv_c2, 0.0)
        return t * t


def mscale_constant(loss0: TukeyLoss) -> float:
    """Right-hand side m = rho0(inf) / 2 of the M-scale equation."""
    return loss0.rho_max / 2.0


DEFAULT_LOSS0 = TukeyLoss(C0_BREAKDOWN)
DEFAULT_LOSS1 = TukeyLoss(C1_EFFICIENCY)
